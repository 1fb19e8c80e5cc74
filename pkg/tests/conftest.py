import torch

# criterion number -> (passed, title, detail); filled by tests/test_acceptance.py
ACCEPTANCE: dict = {}
ACCEPTANCE_TITLES: dict = {}
_ACCEPTANCE_RAN: set = set()

torch.set_num_threads(1)


def _criterion(nodeid: str):
    name = nodeid.rsplit("::", 1)[-1]
    if "test_acceptance.py" in nodeid and name[5:7].isdigit():
        return int(name[5:7])
    return None


def pytest_runtest_logreport(report):
    n = _criterion(report.nodeid)
    if n is not None and report.when == "call":
        _ACCEPTANCE_RAN.add(n)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_TITLES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_TITLES):
        if n in ACCEPTANCE:
            ok, title, detail = ACCEPTANCE[n]
            terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} {n:>2} {title}: {detail}")
        elif n in _ACCEPTANCE_RAN:
            terminalreporter.write_line(f"FAIL {n:>2} {ACCEPTANCE_TITLES[n]}: raised before reporting a result")
        else:
            terminalreporter.write_line(f"---- {n:>2} {ACCEPTANCE_TITLES[n]}: not run")

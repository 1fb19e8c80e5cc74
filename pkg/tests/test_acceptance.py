"""Acceptance gate.

Each criterion records PASS or FAIL with its measured numbers; the terminal
summary lists all twelve. Criteria 8 to 11 train small models and are marked
slow.
"""

import functools
import json
import math
import time
from types import SimpleNamespace

import numpy as np
import pytest
import torch
from torch.func import functional_call, vmap

import conftest
from diffimpute.cli import main as cli_main
from diffimpute.data import SynthSpec, generate_synthetic
from diffimpute.denoiser import DenoiserConfig, DenoiserInput, DenoiserModel, loss_and_gradients, masked_noise_loss
from diffimpute.masking import (
    TimeSeriesSample,
    historical_split,
    interpolation_split,
    mix_split,
    random_split,
    test_pattern_split,
)
from diffimpute.metrics import crps_discretized, crps_exact_empirical, crps_normalized_average, score_ensembles
from diffimpute.sampling import impute_samples
from diffimpute.schedule import build_quadratic_schedule, forward_diffuse
from diffimpute.training import TrainConfig, batch_loss, make_batch, run_training

TITLES = {
    1: "schedule exactness",
    2: "forward-marginal law",
    3: "analytic-denoiser sampling oracle",
    4: "gradient exactness",
    5: "mask semantics",
    6: "variable-length padding contract",
    7: "CRPS oracle",
    8: "conditional-law recovery",
    9: "conditional beats unconditional",
    10: "sample-count monotonicity",
    11: "strategy study shape",
    12: "end-to-end determinism",
}
conftest.ACCEPTANCE_TITLES.update(TITLES)

SCHED = build_quadratic_schedule(50, 1e-4, 0.5)


def verdict(n, ok, detail):
    ok = bool(ok)
    conftest.ACCEPTANCE[n] = (ok, TITLES[n], detail)
    print(f"{'PASS' if ok else 'FAIL'} {n} {TITLES[n]}: {detail}")
    assert ok, detail


def randomize(model, seed, scale=0.5):
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in model.parameters():
            p.copy_(scale * torch.randn(p.shape, generator=g, dtype=p.dtype))
    return model


# 1 ---------------------------------------------------------------------------


def test_01_schedule_exactness():
    start = time.perf_counter()
    s = build_quadratic_schedule(50, 1e-4, 0.5)
    b, a, ah, bt = s.beta, s.alpha, s.alpha_hat, s.beta_tilde
    checks = {
        "beta_1": b[0] == 1e-4,
        "beta_T": b[-1] == 0.5,
        "beta bounds": bool(np.all((0 < b) & (b < 1)) and np.all(b >= b[0]) and np.all(b <= b[-1])),
        "beta nondecreasing": bool(np.all(np.diff(b) >= 0)),
        "alpha strictly decreasing in (0, 1)": bool(a[0] < 1 and np.all(np.diff(a) < 0) and a[-1] > 0),
        "alpha_hat": bool(np.array_equal(ah, 1.0 - b)),
        "alpha recurrence": a[0] == ah[0] and all(a[t] == a[t - 1] * (1.0 - b[t]) for t in range(1, 50)),
        "beta_tilde_1": bt[0] == b[0],
        "beta_tilde recurrence": bool(
            np.allclose(bt[1:], (1 - a[:-1]) / (1 - a[1:]) * b[1:], rtol=4 * np.finfo(float).eps, atol=0)
        ),
    }
    elapsed = time.perf_counter() - start
    failed = [k for k, v in checks.items() if not v]
    verdict(1, not failed and elapsed < 1, f"failed={failed} beta_2={b[1]:.6e} elapsed={elapsed:.3f}s")


# 2 ---------------------------------------------------------------------------


def test_02_forward_marginal_law():
    start = time.perf_counter()
    rng = np.random.default_rng(2)
    n, x0 = 100_000, 1.3
    worst = 0.0
    parts = []
    for t in (1, 25, 50):
        a = SCHED.alpha[t - 1]
        xt = forward_diffuse(np.full(n, x0), t, rng.standard_normal(n), SCHED)
        z_mean = (xt.mean() - math.sqrt(a) * x0) / math.sqrt((1 - a) / n)
        z_var = (xt.var(ddof=1) - (1 - a)) / ((1 - a) * math.sqrt(2 / (n - 1)))
        worst = max(worst, abs(z_mean), abs(z_var))
        parts.append(f"t={t}: z_mean={z_mean:+.2f} z_var={z_var:+.2f}")
    elapsed = time.perf_counter() - start
    verdict(2, worst < 4 and elapsed < 10, f"{'; '.join(parts)}; elapsed={elapsed:.2f}s")


# 3 ---------------------------------------------------------------------------


class AnalyticDenoiser:
    """Exact noise predictor for standard-normal data."""

    def __init__(self, sched):
        self.sched = sched
        self.config = SimpleNamespace(T=sched.T, unconditional=False, n_features=1)

    def __call__(self, noisy, cond_obs, cond_mask, t, timestamps, pad_mask):
        a = torch.tensor(self.sched.alpha)[t - 1][:, None, None]
        return torch.sqrt(1 - a) * noisy * (1 - cond_mask)


def reverse_chain_variance(sched):
    """Output variance of the chain under the analytic denoiser, started at variance 1."""
    v = 1.0
    for t in range(sched.T, 0, -1):
        v = sched.alpha_hat[t - 1] * v + (sched.beta_tilde[t - 1] if t > 1 else 0.0)
    return v


def test_03_analytic_denoiser_oracle():
    start = time.perf_counter()
    s = TimeSeriesSample(np.zeros((1, 1)), np.zeros((1, 1)))
    ens = impute_samples(AnalyticDenoiser(SCHED), SCHED, [s], [np.ones((1, 1))], n=10_000, seed=3)[0]
    x = ens.target_values()[:, 0]
    mean, var = x.mean(), x.var(ddof=1)
    elapsed = time.perf_counter() - start
    ok = abs(mean) <= 0.05 and abs(var - 1) <= 0.1 and elapsed < 30
    verdict(
        3,
        ok,
        f"mean={mean:+.4f} (tol 0.05) var={var:.4f} (tol 0.1 around 1); "
        f"exact chain variance with sigma^2=beta_tilde is {reverse_chain_variance(SCHED):.6f}; elapsed={elapsed:.1f}s",
    )


# 4 ---------------------------------------------------------------------------


def test_04_gradient_exactness():
    start = time.perf_counter()
    cfg = DenoiserConfig(n_features=2, residual_layers=1, channels=8, attention_heads=2, feedforward_dim=8)
    model = randomize(DenoiserModel(cfg), seed=4)
    rng = np.random.default_rng(4)
    cond = np.array([[1.0, 0.0, 1.0], [0.0, 0.0, 1.0]])
    inp = DenoiserInput(
        noisy_target=rng.standard_normal((2, 3)) * (1 - cond),
        cond_obs=rng.standard_normal((2, 3)) * cond,
        cond_mask=cond,
        t=17,
        timestamps=np.array([0.0, 1.3, 2.0]),
    )
    eps = rng.standard_normal((2, 3))
    target = 1 - cond
    loss0, grad = loss_and_gradients(model, inp, eps, target)

    d = inp.tensors()
    args = (d["noisy"], d["cond_obs"], d["cond_mask"], d["t"], d["timestamps"], d["pad_mask"])
    eps_t, tm_t = torch.tensor(eps)[None], torch.tensor(target)[None]
    model.check_finite = False  # data-dependent guards cannot run under vmap
    params = {k: v.detach() for k, v in model.named_parameters()}
    h = 1e-5
    fd = []
    for name, p in params.items():
        n = p.numel()
        for lo in range(0, n, 512):
            idx = torch.arange(lo, min(lo + 512, n))
            delta = torch.zeros(len(idx), n, dtype=p.dtype)
            delta[torch.arange(len(idx)), idx] = h

            def loss_at(dl, name=name, p=p):
                q = dict(params)
                q[name] = p + dl.view(p.shape)
                return masked_noise_loss(functional_call(model, q, args), eps_t, tm_t)

            fd.append((vmap(loss_at)(delta) - vmap(loss_at)(-delta)) / (2 * h))
    fd = torch.cat(fd).numpy()
    # central differences carry roundoff of about eps_mach * |loss| / h; a gradient
    # below 5x that / 1e-4 cannot resolve a relative error of 1e-4
    floor = 5 * np.finfo(float).eps * max(abs(loss0), 1.0) / h / 1e-4
    rel = np.abs(fd - grad) / np.maximum(np.maximum(np.abs(fd), np.abs(grad)), floor)
    small = np.abs(grad) < floor
    elapsed = time.perf_counter() - start
    verdict(
        4,
        rel.max() < 1e-4 and elapsed < 60,
        f"{grad.size} parameters, max relative error {rel.max():.2e}; "
        f"{small.sum()} gradients below the roundoff floor {floor:.1e} "
        f"(max abs error there {np.abs(fd - grad)[small].max():.1e}); elapsed={elapsed:.1f}s",
    )


# 5 ---------------------------------------------------------------------------


def random_sample(rng, K, L, obs=0.7):
    M = (rng.random((K, L)) < obs).astype(float)
    M.flat[rng.integers(K * L)] = 1.0
    return TimeSeriesSample(np.where(M == 1, rng.standard_normal((K, L)), 0.0), M, np.arange(L, dtype=float))


def test_05_mask_semantics():
    start = time.perf_counter()
    rng = np.random.default_rng(5)
    cfg = DenoiserConfig(n_features=4, residual_layers=2, channels=16, attention_heads=4, feedforward_dim=16)

    # (a) zero output on conditioning positions
    model = randomize(DenoiserModel(cfg, seed=5), seed=6)
    nonzero = 0
    for _ in range(50):
        B, K, L = rng.integers(1, 5), rng.integers(1, 5), rng.integers(1, 9)
        cond = (rng.random((B, K, L)) < 0.5).astype(float)
        inp = DenoiserInput(
            rng.standard_normal((B, K, L)) * (1 - cond), rng.standard_normal((B, K, L)) * cond, cond,
            rng.integers(1, 51, size=B),
        )
        with torch.no_grad():
            out = model.run(inp).numpy()
        nonzero += int(np.count_nonzero(out[cond == 1]))
    ok_a = nonzero == 0

    # (b) values at missing, non-target positions never reach either loss
    umodel = randomize(DenoiserModel(DenoiserConfig(**{**cfg.__dict__, "unconditional": True})), seed=7)
    max_diff = 0.0
    for i in range(50):
        s = random_sample(rng, 4, 8, obs=0.6)
        junk = TimeSeriesSample(np.where(s.M == 1, s.X, rng.normal(0, 1e3, s.M.shape)), s.M, s.s)
        for m, strategy, uncond in ((model, random_split, False), (umodel, None, True)):
            la = batch_loss(m, make_batch([s], SCHED, np.random.default_rng(i), strategy, uncond))
            lb = batch_loss(m, make_batch([junk], SCHED, np.random.default_rng(i), strategy, uncond))
            max_diff = max(max_diff, abs(float(la.detach()) - float(lb.detach())))
    ok_b = max_diff == 0.0

    # (c) split invariants for every strategy over 10^4 random samples each
    violations = {}
    n_checked = 0
    pools = {K: [random_sample(rng, K, int(rng.integers(1, 13))) for _ in range(30)] for K in range(1, 5)}
    strategies = {
        "random": lambda s, r: random_split(s, r),
        "historical": lambda s, r: historical_split(s, pools[s.K], r),
        "mix": lambda s, r: mix_split(s, pools[s.K], r),
        "interpolation": lambda s, r: interpolation_split(s, r),
    }
    for name, fn in strategies.items():
        for _ in range(10_000):
            s = random_sample(rng, int(rng.integers(1, 5)), int(rng.integers(1, 13)), obs=rng.uniform(0.05, 1))
            try:
                fn(s, rng).check(s.M, exact=True)
            except AssertionError:
                violations[name] = violations.get(name, 0) + 1
            n_checked += 1
    for _ in range(10_000):
        K, L = int(rng.integers(1, 5)), int(rng.integers(1, 13))
        M = (rng.random((K, L)) < rng.uniform(0.05, 1)).astype(float)
        pattern = (rng.random((K, int(rng.integers(1, 13)))) < 0.5).astype(float)
        M.flat[0] = pattern.flat[0] = 1.0  # the pattern must select an observed entry
        s = TimeSeriesSample(np.where(M == 1, rng.standard_normal((K, L)), 0.0), M)
        try:
            test_pattern_split(s, pattern).check(s.M, exact=True)
        except AssertionError:
            violations["test_pattern"] = violations.get("test_pattern", 0) + 1
        n_checked += 1
    ok_c = not violations
    elapsed = time.perf_counter() - start
    verdict(
        5,
        ok_a and ok_b and ok_c and elapsed < 30,
        f"(a) nonzero outputs on M_cond: {nonzero}; (b) max loss change {max_diff:.1e}; "
        f"(c) {n_checked} splits, violations {violations}; elapsed={elapsed:.1f}s",
    )


# 6 ---------------------------------------------------------------------------


def test_06_padding_contract():
    start = time.perf_counter()
    rng = np.random.default_rng(6)
    cfg = DenoiserConfig(n_features=3, residual_layers=2, channels=16, attention_heads=4, feedforward_dim=16)
    model = randomize(DenoiserModel(cfg, seed=1), seed=2)
    lengths = (4, 9, 6, 1)
    Lmax = max(lengths)
    singles, rows = [], []
    for L in lengths:
        cond = (rng.random((3, L)) < 0.4).astype(float)
        ts = np.sort(rng.uniform(0, 10, L))
        inp = DenoiserInput(rng.standard_normal((3, L)) * (1 - cond), rng.standard_normal((3, L)) * cond, cond,
                            int(rng.integers(1, 51)), ts)
        singles.append(inp)

        def grid(a):
            g = np.zeros((3, Lmax))
            g[:, :L] = a
            return g

        rows.append((grid(inp.noisy_target), grid(inp.cond_obs), grid(cond),
                     np.r_[ts, ts[-1] + 1 + np.arange(Lmax - L)], np.r_[np.ones(L), np.zeros(Lmax - L)]))
    batch = DenoiserInput(*(np.stack([r[i] for r in rows]) for i in range(3)),
                          t=[s.t for s in singles], timestamps=np.stack([r[3] for r in rows]),
                          pad_mask=np.stack([r[4] for r in rows]))
    with torch.no_grad():
        out = model.run(batch).numpy()
        err = max(np.abs(out[i, :, :L] - model.run(s).numpy()).max() for i, (s, L) in enumerate(zip(singles, lengths)))
        pad_abs = max(np.abs(out[i, :, L:]).max(initial=0.0) for i, L in enumerate(lengths))
    elapsed = time.perf_counter() - start
    verdict(6, err <= 1e-10 and pad_abs == 0 and elapsed < 10,
            f"max |padded - single| = {err:.1e}; max |output at padding| = {pad_abs}; elapsed={elapsed:.2f}s")


# 7 ---------------------------------------------------------------------------


def test_07_crps_oracle():
    start = time.perf_counter()
    draws = np.r_[np.zeros(50), np.ones(50)]
    exact = crps_exact_empirical(draws, 0.5)
    fixture_err = abs(crps_discretized(draws, 0.5) - exact)
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(1000):
        x = rng.normal(rng.normal(), rng.uniform(0.1, 5), rng.integers(5, 200))
        z = rng.normal(x.mean(), 2 * x.std() + 1e-3)
        worst = max(worst, abs(crps_discretized(x, z) - crps_exact_empirical(x, z)) / (x.max() - x.min()))
    truth = rng.standard_normal((3, 7))
    perfect = (
        crps_discretized(np.full(30, 2.5), 2.5),
        crps_exact_empirical(np.full(30, 2.5), 2.5),
        crps_normalized_average(np.broadcast_to(truth, (20, 3, 7)), truth),
    )
    elapsed = time.perf_counter() - start
    ok = exact == 0.25 and fixture_err <= 0.02 and worst <= 0.05 and perfect == (0.0, 0.0, 0.0) and elapsed < 10
    # the bound is empirical: ticks stop at 0.95, so a draw set with its top 5% at the
    # maximum and z above it misses by 0.0975 * spread
    x = np.r_[np.zeros(95), np.ones(5)]
    tail = crps_discretized(x, 5.0) - crps_exact_empirical(x, 5.0)
    verdict(7, ok, f"fixture exact={exact} |disc-exact|={fixture_err:.4f}; worst randomized error/spread="
                   f"{worst:.4f} (tol 0.05); perfect scores {perfect}; two-point tail case error/spread="
                   f"{tail:.4f}; elapsed={elapsed:.2f}s")


# 8-10: bivariate Gaussian study --------------------------------------------

RHO = 0.8
BIV_L = 10
BIV_TRAIN, BIV_VAL, BIV_TEST = 512, 64, 50  # 50 test series x 10 steps = 500 cases
BIV_DRAWS = 100
DESK_MODEL = dict(channels=32, residual_layers=4, attention_heads=8, feedforward_dim=64)
SEEDS = (0, 1, 2)


@functools.cache
def bivariate_data():
    ds = generate_synthetic(
        SynthSpec(kind="bivariate_gaussian", rho=RHO, L=BIV_L, n_samples=BIV_TRAIN + BIV_VAL + BIV_TEST, seed=808)
    )
    train = ds.samples[:BIV_TRAIN]
    val = ds.samples[BIV_TRAIN : BIV_TRAIN + BIV_VAL]
    truth = ds.samples[BIV_TRAIN + BIV_VAL :]
    target = np.zeros((2, BIV_L))
    target[1] = 1.0  # impute the second coordinate from the first
    test = [s.with_mask(s.M - target) for s in truth]
    return train, val, truth, test, target


@functools.cache
def bivariate_run(seed, unconditional=False):
    """Train at seed ``seed`` and draw ensembles for all test cases; returns (ensembles, seconds)."""
    start = time.perf_counter()
    train, val, _, test, target = bivariate_data()
    mc = DenoiserConfig(n_features=2, unconditional=unconditional, **DESK_MODEL)
    res = run_training(train, val, mc, TrainConfig(epochs=200, batch_size=16, seed=seed), SCHED)
    mode = "unconditional" if unconditional else "conditional"
    ens = impute_samples(res.model, SCHED, test, [target] * len(test), n=BIV_DRAWS, seed=1000 + seed, mode=mode,
                         max_rows=128)
    return ens, time.perf_counter() - start


def bivariate_crps(ens, n=None):
    _, _, truth, _, _ = bivariate_data()
    ens = ens if n is None else [e.subset(n) for e in ens]
    return score_ensembles(ens, [s.X for s in truth]).crps


@pytest.mark.slow
def test_08_conditional_law_recovery():
    ens, elapsed = bivariate_run(0)
    _, _, truth, _, _ = bivariate_data()
    x_obs = np.stack([s.X[0] for s in truth])  # (cases / L, L)
    draws = np.stack([e.draws[:, 1, :] for e in ens], axis=1)  # (n, series, L)
    mean_err = np.abs(draws.mean(axis=0) - RHO * x_obs)
    sd_err = np.abs(draws.std(axis=0, ddof=1) - math.sqrt(1 - RHO**2))
    ok = mean_err.mean() <= 0.1 and sd_err.mean() <= 0.15 and elapsed <= 20 * 60
    verdict(
        8,
        ok,
        f"{mean_err.size} cases: mean |ensemble mean - rho x| = {mean_err.mean():.4f} (tol 0.1), "
        f"mean |ensemble sd - {math.sqrt(1 - RHO**2):.1f}| = {sd_err.mean():.4f} (tol 0.15), "
        f"average sd {draws.std(axis=0, ddof=1).mean():.4f}; train+sample {elapsed:.0f}s",
    )


@pytest.mark.slow
def test_09_conditional_beats_unconditional():
    cond, uncond, seconds = [], [], 0.0
    for seed in SEEDS:
        ens_c, tc = bivariate_run(seed)
        ens_u, tu = bivariate_run(seed, unconditional=True)
        cond.append(bivariate_crps(ens_c))
        uncond.append(bivariate_crps(ens_u))
        seconds += tc + tu
    gains = [1 - c / u for c, u in zip(cond, uncond)]
    ok = all(g >= 0.10 for g in gains) and seconds <= 45 * 60
    verdict(
        9,
        ok,
        "per seed CRPS conditional/unconditional: "
        + ", ".join(f"{c:.4f}/{u:.4f} ({g:+.1%})" for c, u, g in zip(cond, uncond, gains))
        + f"; need >= 10% each; {seconds:.0f}s",
    )


@pytest.mark.slow
def test_10_sample_count_monotonicity():
    counts = (5, 10, 50, 100)
    table = np.array([[bivariate_crps(bivariate_run(seed)[0], n) for n in counts] for seed in SEEDS])
    mean = table.mean(axis=0)

    def not_worse(hi, lo):
        # CRPS at the larger count may exceed the smaller one by at most two standard
        # errors of the across-seed paired difference
        d = table[:, counts.index(hi)] - table[:, counts.index(lo)]
        return d.mean() <= 2 * d.std(ddof=1) / math.sqrt(len(d)), d.mean()

    ok100, d100 = not_worse(100, 10)
    ok10, d10 = not_worse(10, 5)
    gain_50_100 = (mean[2] - mean[3]) / mean[2]
    ok = ok100 and ok10 and gain_50_100 < 0.05
    verdict(
        10,
        ok,
        "mean CRPS " + ", ".join(f"n={n}: {m:.4f}" for n, m in zip(counts, mean))
        + f"; CRPS(100)-CRPS(10)={d100:+.4f}, CRPS(10)-CRPS(5)={d10:+.4f}; 50->100 gain {gain_50_100:.2%}",
    )


# 11: strategy study ---------------------------------------------------------

AR = dict(kind="ar1", K=3, L=16, phi=0.8, sigma=0.6, mixing=0.6)
AR_TRAIN, AR_VAL, AR_TEST, AR_DRAWS = 160, 32, 40, 50
BLOCK = dict(missing_rate=0.25, missing_pattern="blocks")


def block_masks(n, seed, features):
    spec = SynthSpec(**AR, n_samples=n, seed=seed, block_features=features, **BLOCK)
    return [s.M for s in generate_synthetic(spec).samples]


def strategy_crps(strategy, train_features, test_features, seed=11):
    full = generate_synthetic(SynthSpec(**AR, n_samples=AR_TRAIN + AR_VAL + AR_TEST, seed=seed)).samples
    masks = block_masks(AR_TRAIN + AR_VAL, seed + 1, train_features)
    observed = [s.with_mask(m) for s, m in zip(full, masks)]
    train, val = observed[:AR_TRAIN], observed[AR_TRAIN:]
    truth = full[AR_TRAIN + AR_VAL :]
    test_masks = block_masks(AR_TEST, seed + 2, test_features)
    test = [s.with_mask(m) for s, m in zip(truth, test_masks)]
    targets = [1.0 - m for m in test_masks]
    mc = DenoiserConfig(n_features=3, **DESK_MODEL)
    res = run_training(train, val, mc, TrainConfig(epochs=200, batch_size=16, seed=seed, strategy=strategy), SCHED)
    ens = impute_samples(res.model, SCHED, test, targets, n=AR_DRAWS, seed=seed + 3, max_rows=128)
    return score_ensembles(ens, [s.X for s in truth]).crps


@pytest.mark.slow
def test_11_strategy_study_shape():
    start = time.perf_counter()
    every = (0, 1, 2)
    same_random = strategy_crps("random", every, every)
    same_mix = strategy_crps("mix", every, every)
    # training gaps only ever cover feature 0; test gaps cover features 1 and 2
    mis_random = strategy_crps("random", (0,), (1, 2))
    mis_hist = strategy_crps("historical", (0,), (1, 2))
    elapsed = time.perf_counter() - start
    ok = same_mix <= 1.05 * same_random and mis_hist >= mis_random and elapsed <= 3600
    verdict(
        11,
        ok,
        f"same law: mix {same_mix:.4f} vs random {same_random:.4f} (need mix <= random x 1.05); "
        f"mismatched: historical {mis_hist:.4f} vs random {mis_random:.4f} (need historical >= random); "
        f"{elapsed:.0f}s",
    )


# 12 ----------------------------------------------------------------------------


def test_12_end_to_end_determinism(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    run = lambda *a: cli_main([str(x) for x in a])
    assert run("synth", "--kind", "ar1", "--K", 3, "--L", 12, "--n-samples", 40, "--missing-rate", 0.2,
               "--seed", 5, "--out-dir", "data") == 0
    cfg = {"dataset": "data/dataset.ndjson", "model": {"channels": 16, "residual_layers": 2, "attention_heads": 4,
                                                       "feedforward_dim": 16}, "train": {"epochs": 3}}
    (tmp_path / "cfg.json").write_text(json.dumps(cfg))
    reports = []
    for run_id in ("a", "b"):
        codes = (
            run("train", "--config", "cfg.json", "--seed", 9, "--out-dir", f"{run_id}/train"),
            run("impute", "--checkpoint", f"{run_id}/train/checkpoint.npz", "--dataset",
                f"{run_id}/train/test.ndjson", "--target", "holdout:0.3", "--n-samples", 20, "--seed", 9,
                "--out-dir", f"{run_id}/impute"),
            run("evaluate", "--imputations", f"{run_id}/impute/imputations.jsonl", "--truth",
                f"{run_id}/train/test.ndjson", "--out-dir", f"{run_id}/eval"),
        )
        assert codes == (0, 0, 0)
        reports.append((tmp_path / run_id / "eval" / "report.json").read_bytes())
    same_imputations = (tmp_path / "a/impute/imputations.jsonl").read_bytes() == (
        tmp_path / "b/impute/imputations.jsonl").read_bytes()
    verdict(12, reports[0] == reports[1] and same_imputations,
            f"report.json identical: {reports[0] == reports[1]} ({len(reports[0])} bytes); "
            f"imputations identical: {same_imputations}")

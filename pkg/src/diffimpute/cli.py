"""Command-line entry point: train, impute, evaluate, synth, schedule-dump.

Every command writes the resolved configuration (``config.json``) next to
its outputs. Exit codes: 0 success, 2 configuration, 3 data, 4 numeric.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import torch

from . import data as D
from .denoiser import DenoiserConfig, load_checkpoint, save_checkpoint
from .errors import ConfigError, DataError, DiffImputeError
from .masking import TimeSeriesSample, holdout_ground_truth, load_pattern_csv
from .metrics import crps_per_position, score_ensembles
from .sampling import ImputationEnsemble, impute_samples, median_impute
from .schedule import build_quadratic_schedule
from .training import TrainConfig, run_training

log = logging.getLogger("diffimpute")


@dataclass
class ScheduleConfig:
    T: int = 50
    beta1: float = 1e-4
    betaT: float = 0.5

    def build(self):
        return build_quadratic_schedule(self.T, self.beta1, self.betaT)


@dataclass
class RunConfig:
    dataset: str | None = None
    split: tuple = (0.7, 0.1, 0.2)
    split_seed: int = 0
    normalize: bool = True
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    model: dict = field(default_factory=dict)
    train: TrainConfig = field(default_factory=TrainConfig)
    synth: dict | None = None

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            sched = ScheduleConfig(**d.pop("schedule", {}))
        except TypeError as exc:
            raise ConfigError(f"bad schedule section: {exc}") from exc
        train = TrainConfig.from_dict(d.pop("train", {}))
        model = dict(d.pop("model", {}))
        bad = set(model) - {f.name for f in fields(DenoiserConfig)}
        if bad:
            raise ConfigError(f"unknown model config keys: {sorted(bad)}")
        cfg = cls(schedule=sched, train=train, model=model, **d)
        cfg.split = tuple(cfg.split)
        return cfg

    def to_dict(self) -> dict:
        return {
            "dataset": self.dataset,
            "split": list(self.split),
            "split_seed": self.split_seed,
            "normalize": self.normalize,
            "schedule": asdict(self.schedule),
            "model": dict(self.model),
            "train": self.train.to_dict(),
            "synth": self.synth,
        }


def _read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg})") from exc


def _write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


# train ---------------------------------------------------------------------


def cmd_train(args) -> int:
    if not args.config:
        raise ConfigError("train needs --config")
    cfg = RunConfig.from_dict(_read_json(args.config))
    if args.seed is not None:
        cfg.train = TrainConfig.from_dict({**cfg.train.to_dict(), "seed": args.seed})
    if args.dataset:
        cfg.dataset = args.dataset
    if not cfg.dataset:
        raise ConfigError("config has no dataset path")
    out = _out_dir(args)
    full = D.load_dataset(cfg.dataset)
    train, val, test = D.split_dataset(full, cfg.split, cfg.split_seed)
    stats = D.compute_normalization(train.samples) if cfg.normalize else None
    ntrain = D.normalize(train, stats) if stats else train
    nval = D.normalize(val, stats) if stats else val

    sched = cfg.schedule.build()
    model_cfg = DenoiserConfig.from_dict({"n_features": full.K, **cfg.model, "T": cfg.schedule.T})
    result = run_training(ntrain.samples, nval.samples, model_cfg, cfg.train, sched)

    extra = {
        "schedule": asdict(cfg.schedule),
        "features": full.feature_names,
        "normalization": stats.to_dict() if stats else None,
        "best_epoch": result.best_epoch,
    }
    save_checkpoint(out / "checkpoint.npz", result.model, extra)
    with open(out / "history.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_loss", "val_loss", "lr"])
        for h in result.history:
            w.writerow([h["epoch"], repr(h["train_loss"]), repr(h["val_loss"]), repr(h["lr"])])
    for name, part in (("train", train), ("val", val), ("test", test)):
        D.save_dataset(part, out / f"{name}.ndjson")
    _write_json(out / "config.json", {"command": "train", **cfg.to_dict(), "resolved_model": asdict(model_cfg)})
    print(f"best epoch {result.best_epoch}, validation loss {result.best_val_loss:.6f}")
    return 0


# impute --------------------------------------------------------------------


def _targets(samples, spec: str, seed: int, holdout_mode: str):
    """Returns (conditioning samples, target masks) for a ``--target`` spec."""
    if spec == "missing":
        return list(samples), [1.0 - s.M for s in samples]
    if spec.startswith("holdout:"):
        try:
            frac = float(spec.split(":", 1)[1])
        except ValueError as exc:
            raise ConfigError(f"bad holdout fraction in {spec!r}") from exc
        rng = np.random.default_rng([seed, 7])
        reduced, masks = [], []
        for s in samples:
            r, m = holdout_ground_truth(s, frac, rng, holdout_mode)
            reduced.append(r)
            masks.append(m)
        return reduced, masks
    if spec.startswith("pattern:"):
        pattern = load_pattern_csv(spec.split(":", 1)[1])
        reduced, masks = [], []
        for s in samples:
            if pattern.shape != s.M.shape:
                raise ConfigError(f"pattern shape {pattern.shape} != sample shape {s.M.shape}")
            target = pattern * s.M
            reduced.append(s.with_mask(s.M - target))
            masks.append(target)
        return reduced, masks
    raise ConfigError(f"unknown target spec {spec!r}; use missing, holdout:FRAC or pattern:PATH")


def _grid_json(grid):
    return [[None if not np.isfinite(v) else float(v) for v in row] for row in grid]


def cmd_impute(args) -> int:
    if not args.checkpoint or not args.dataset:
        raise ConfigError("impute needs --checkpoint and --dataset")
    model, extra = load_checkpoint(args.checkpoint)
    dataset = D.load_dataset(args.dataset)
    if dataset.feature_names != extra["features"]:
        raise ConfigError(
            "checkpoint/dataset mismatch:\n"
            f"  checkpoint features: {extra['features']}\n  dataset features:    {dataset.feature_names}"
        )
    want_uncond = args.mode == "unconditional"
    if model.config.unconditional != want_uncond:
        kind = "unconditional" if model.config.unconditional else "conditional"
        raise ConfigError(f"mode={args.mode} but checkpoint holds a {kind} model")
    sched = build_quadratic_schedule(**extra["schedule"])
    stats = D.Normalization.from_dict(extra["normalization"]) if extra["normalization"] else None
    work = D.normalize(dataset, stats) if stats else dataset
    seed = 0 if args.seed is None else args.seed
    cond_samples, masks = _targets(work.samples, args.target, seed, args.holdout_mode)
    ensembles = impute_samples(model, sched, cond_samples, masks, args.n_samples, seed, args.mode)

    out = _out_dir(args)
    with open(out / "imputations.jsonl", "w") as fh:
        for i, ens in enumerate(ensembles):
            draws = ens.draws if stats is None else D.denormalize(ens.draws, stats)
            raw = ImputationEnsemble(draws, ens.target_mask)
            tm = ens.target_mask == 1
            rec = {
                "index": i,
                "K": int(ens.target_mask.shape[0]),
                "L": int(ens.target_mask.shape[1]),
                "target_mask": ens.target_mask.astype(int).tolist(),
                "target_index": np.argwhere(tm).tolist(),
                "draws": draws[:, tm].tolist(),
                "median": _grid_json(median_impute(raw)),
                "normalization": stats.to_dict() if stats else None,
            }
            fh.write(json.dumps(rec) + "\n")
    _write_json(out / "config.json", {
        "command": "impute", "checkpoint": str(args.checkpoint), "dataset": str(args.dataset),
        "n_samples": args.n_samples, "mode": args.mode, "target": args.target,
        "holdout_mode": args.holdout_mode, "seed": seed,
    })
    print(f"wrote {len(ensembles)} imputations to {out / 'imputations.jsonl'}")
    return 0


# evaluate ------------------------------------------------------------------


def _load_imputations(path):
    recs = []
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise DataError(f"cannot read imputations {path}: {exc.strerror}") from exc
    for lineno, line in enumerate(lines, 1):
        if line.strip():
            try:
                recs.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
    if not recs:
        raise DataError(f"{path}: no imputations")
    return recs


def cmd_evaluate(args) -> int:
    if not args.imputations or not args.truth:
        raise ConfigError("evaluate needs --imputations and --truth")
    recs = _load_imputations(args.imputations)
    truth_ds = D.load_dataset(args.truth)
    if len(recs) != len(truth_ds):
        raise DataError(f"{len(recs)} imputations but {len(truth_ds)} truth samples")
    ensembles, truths, index = [], [], []
    for rec, s in zip(recs, truth_ds.samples):
        tm = np.asarray(rec["target_mask"], dtype=np.float64)
        if tm.shape != s.M.shape:
            raise DataError(f"imputation {rec['index']}: shape {tm.shape} != truth shape {s.M.shape}")
        if np.any(tm > s.M):
            raise DataError(f"imputation {rec['index']}: targets without ground truth")
        vals = np.asarray(rec["draws"], dtype=np.float64).reshape(-1, int(tm.sum()))
        draws = np.full((vals.shape[0],) + tm.shape, np.nan)
        draws[:, tm == 1] = vals
        truth = s.filled()
        norm = rec.get("normalization")
        if args.space == "normalized" and norm:
            stats = D.Normalization.from_dict(norm)
            mu, sd = stats.arrays()
            draws = (draws - mu) / sd
            truth = (truth - mu) / sd
        ensembles.append(ImputationEnsemble(draws, tm, s))
        truths.append(truth)
        index.append(rec["index"])

    out = _out_dir(args)
    report = score_ensembles(ensembles, truths, with_crps_sum=args.crps_sum)
    _write_json(out / "report.json", report.to_dict())
    with open(out / "positions.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample", "k", "l", "truth", "median", "crps"])
        for i, ens, truth in zip(index, ensembles, truths):
            med = median_impute(ens)
            tm = ens.target_mask == 1
            crps = crps_per_position(ens.draws, truth, ens.target_mask)
            for (k, l), c in zip(np.argwhere(tm), crps):
                w.writerow([i, k, l, repr(float(truth[k, l])), repr(float(med[k, l])), repr(float(c))])
    if args.sample_counts:
        counts = [int(c) for c in args.sample_counts.split(",")]
        with open(out / "sample_curve.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["n_samples", "crps", "mae"])
            for n in counts:
                if n > report.n_samples:
                    raise ConfigError(f"sample count {n} exceeds the {report.n_samples} draws available")
                r = score_ensembles([e.subset(n) for e in ensembles], truths)
                w.writerow([n, repr(r.crps), repr(r.mae)])
    _write_json(out / "config.json", {
        "command": "evaluate", "imputations": str(args.imputations), "truth": str(args.truth),
        "space": args.space, "crps_sum": args.crps_sum, "sample_counts": args.sample_counts,
    })
    print(json.dumps(report.to_dict(), sort_keys=True))
    return 0


# synth / schedule-dump -------------------------------------------------------


def cmd_synth(args) -> int:
    d = _read_json(args.config) if args.config else {}
    d = dict(d.get("synth", d))
    for key in ("kind", "K", "L", "n_samples", "missing_rate", "missing_pattern", "rho", "phi", "sigma", "mixing"):
        v = getattr(args, key)
        if v is not None:
            d[key] = v
    if args.seed is not None:
        d["seed"] = args.seed
    spec = D.SynthSpec.from_dict(d)
    out = _out_dir(args)
    D.save_dataset(D.generate_synthetic(spec), out / "dataset.ndjson")
    _write_json(out / "config.json", {"command": "synth", **spec.to_dict()})
    print(f"wrote {spec.n_samples} samples to {out / 'dataset.ndjson'}")
    return 0


def cmd_schedule_dump(args) -> int:
    d = _read_json(args.config).get("schedule", {}) if args.config else {}
    for key in ("T", "beta1", "betaT"):
        v = getattr(args, key)
        if v is not None:
            d[key] = v
    sched = ScheduleConfig(**d).build()
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "beta", "alpha", "beta_tilde"])
    for row in sched.table():
        w.writerow([row[0]] + [repr(v) for v in row[1:]])
    if args.out_dir:
        out = _out_dir(args)
        (out / "schedule.csv").write_text(buf.getvalue())
        _write_json(out / "config.json", {"command": "schedule-dump", **d})
    else:
        sys.stdout.write(buf.getvalue())
    return 0


# entry point ---------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--seed", type=int, help="random seed (overrides the config)")
    common.add_argument("--threads", type=int, default=1, help="cap on torch worker threads")
    common.add_argument("--out-dir", default="out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="diffimpute", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    tr = sub.add_parser("train", parents=[common], help="train a model")
    tr.add_argument("--dataset", help="dataset path (overrides the config)")
    tr.set_defaults(func=cmd_train)

    im = sub.add_parser("impute", parents=[common], help="generate imputation ensembles")
    im.add_argument("--checkpoint", required=True)
    im.add_argument("--dataset", required=True)
    im.add_argument("--n-samples", type=int, default=100)
    im.add_argument("--mode", choices=("conditional", "unconditional"), default="conditional")
    im.add_argument("--target", default="missing", help="missing | holdout:FRAC | pattern:PATH")
    im.add_argument("--holdout-mode", choices=("entrywise", "columnwise"), default="entrywise")
    im.set_defaults(func=cmd_impute)

    ev = sub.add_parser("evaluate", parents=[common], help="score imputations against ground truth")
    ev.add_argument("--imputations", required=True)
    ev.add_argument("--truth", required=True, help="dataset holding the true values")
    ev.add_argument("--space", choices=("normalized", "raw"), default="normalized")
    ev.add_argument("--crps-sum", action="store_true")
    ev.add_argument("--sample-counts", help="comma-separated ensemble sizes, e.g. 5,10,50,100")
    ev.set_defaults(func=cmd_evaluate)

    sy = sub.add_parser("synth", parents=[common], help="write a synthetic dataset")
    sy.add_argument("--kind", choices=D.KINDS)
    sy.add_argument("--K", type=int)
    sy.add_argument("--L", type=int)
    sy.add_argument("--n-samples", type=int)
    sy.add_argument("--missing-rate", type=float)
    sy.add_argument("--missing-pattern", choices=("random", "blocks"))
    sy.add_argument("--rho", type=float)
    sy.add_argument("--phi", type=float)
    sy.add_argument("--sigma", type=float)
    sy.add_argument("--mixing", type=float)
    sy.set_defaults(func=cmd_synth)

    sd = sub.add_parser("schedule-dump", parents=[common], help="print the noise schedule as CSV")
    sd.add_argument("--T", type=int)
    sd.add_argument("--beta1", type=float)
    sd.add_argument("--betaT", type=float)
    sd.set_defaults(func=cmd_schedule_dump, out_dir=None)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    torch.set_num_threads(max(1, args.threads))
    try:
        return args.func(args)
    except DiffImputeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())

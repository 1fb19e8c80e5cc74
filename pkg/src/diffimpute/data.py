"""Dataset files, normalization, splits and synthetic generators.

Dataset file format: newline-delimited JSON, one series per line::

    {"timestamps": [0, 1, ...], "features": ["a", "b"], "values": [[1.0, null, ...], [...]]}

``values`` is K x L with ``null`` for missing entries. Every line must name
the same features in the same order.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, DataError
from .masking import TimeSeriesSample


@dataclass(frozen=True)
class Normalization:
    mean: tuple
    std: tuple

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        return np.asarray(self.mean)[:, None], np.asarray(self.std)[:, None]

    def to_dict(self) -> dict:
        return {"mean": list(self.mean), "std": list(self.std)}

    @classmethod
    def from_dict(cls, d) -> "Normalization":
        return cls(tuple(float(v) for v in d["mean"]), tuple(float(v) for v in d["std"]))


@dataclass
class Dataset:
    samples: list
    feature_names: list
    normalization: Normalization | None = None

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def K(self) -> int:
        return len(self.feature_names)

    def subset(self, indices) -> "Dataset":
        return Dataset([self.samples[i] for i in indices], list(self.feature_names), self.normalization)


# file I/O -----------------------------------------------------------------


def _parse_line(line: str, where: str, features_seen):
    try:
        rec = json.loads(line)
    except json.JSONDecodeError as exc:
        raise DataError(f"{where}: invalid JSON ({exc.msg})") from exc
    if not isinstance(rec, dict) or "values" not in rec:
        raise DataError(f"{where}: expected an object with a 'values' field")
    values = rec["values"]
    if not isinstance(values, list) or not values or not all(isinstance(r, list) for r in values):
        raise DataError(f"{where}: 'values' must be a non-empty K x L array")
    K, L = len(values), len(values[0])
    if L == 0 or any(len(r) != L for r in values):
        raise DataError(f"{where}: rows of 'values' have unequal or zero length")
    features = rec.get("features") or [f"f{k}" for k in range(K)]
    if len(features) != K:
        raise DataError(f"{where}: {len(features)} feature names for {K} rows")
    if features_seen is not None and list(features) != list(features_seen):
        raise DataError(f"{where}: features {features} differ from earlier lines {features_seen}")
    ts = rec.get("timestamps", list(range(L)))
    if len(ts) != L:
        raise DataError(f"{where}: {len(ts)} timestamps for length {L}")
    try:
        s = np.asarray(ts, dtype=np.float64)
        M = np.array([[0.0 if v is None else 1.0 for v in row] for row in values])
        X = np.array([[np.nan if v is None else float(v) for v in row] for row in values])
    except (TypeError, ValueError) as exc:
        raise DataError(f"{where}: non-numeric entry ({exc})") from exc
    if np.any(np.diff(s) < 0):
        raise DataError(f"{where}: timestamps are not nondecreasing")
    if not np.isfinite(X[M == 1]).all():
        raise DataError(f"{where}: non-finite observed value")
    return TimeSeriesSample(X, M, s), list(features)


def load_dataset(path) -> Dataset:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise DataError(f"cannot read dataset {path}: {exc.strerror}") from exc
    samples, features = [], None
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        sample, features = _parse_line(line, f"{path}:{lineno}", features)
        samples.append(sample)
    if not samples:
        raise DataError(f"{path}: no samples")
    return Dataset(samples, features)


def sample_to_record(sample: TimeSeriesSample, features) -> dict:
    values = [[None if m == 0 else float(x) for x, m in zip(xr, mr)] for xr, mr in zip(sample.X, sample.M)]
    return {"timestamps": sample.s.tolist(), "features": list(features), "values": values}


def save_dataset(dataset: Dataset, path) -> None:
    with open(path, "w") as fh:
        for s in dataset.samples:
            fh.write(json.dumps(sample_to_record(s, dataset.feature_names)) + "\n")


# normalization ------------------------------------------------------------


def compute_normalization(samples: Sequence[TimeSeriesSample]) -> Normalization:
    """Per-feature mean and std over observed entries."""
    K = samples[0].K
    vals = [[] for _ in range(K)]
    for s in samples:
        for k in range(K):
            vals[k].append(s.X[k, s.M[k] == 1])
    means, stds = [], []
    for k in range(K):
        v = np.concatenate(vals[k])
        if v.size == 0:
            raise DataError(f"feature {k} has no observed values in the training split")
        sd = float(v.std())
        if not sd > 0:
            raise DataError(f"feature {k} is constant in the training split")
        means.append(float(v.mean()))
        stds.append(sd)
    return Normalization(tuple(means), tuple(stds))


def normalize(dataset: Dataset, stats: Normalization | None = None) -> Dataset:
    """Standardize observed values per feature; stats default to this dataset's own."""
    stats = stats or compute_normalization(dataset.samples)
    mu, sd = stats.arrays()
    if len(stats.mean) != dataset.K:
        raise DataError(f"normalization has {len(stats.mean)} features, dataset has {dataset.K}")
    out = [TimeSeriesSample((s.filled() - mu) / sd * s.M, s.M, s.s) for s in dataset.samples]
    return Dataset(out, list(dataset.feature_names), stats)


def denormalize(values, stats: Normalization):
    """Invert :func:`normalize` on K x L grids (or stacks of them)."""
    mu, sd = stats.arrays()
    return np.asarray(values, dtype=np.float64) * sd + mu


# splitting ----------------------------------------------------------------


def split_dataset(dataset: Dataset, ratios=(0.7, 0.1, 0.2), seed: int = 0) -> tuple[Dataset, Dataset, Dataset]:
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r < 0 for r in ratios) or not math.isclose(sum(ratios), 1.0, abs_tol=1e-9):
        raise ConfigError(f"split ratios must be three non-negative numbers summing to 1, got {ratios}")
    n = len(dataset)
    n_val = int(round(ratios[1] * n))
    n_test = int(round(ratios[2] * n))
    n_train = n - n_val - n_test
    sizes = (n_train, n_val, n_test)
    for name, r, size in zip(("train", "validation", "test"), ratios, sizes):
        if r > 0 and size <= 0:
            raise ConfigError(f"{name} split is empty for {n} samples with ratio {r}")
    perm = np.random.default_rng(seed).permutation(n)
    a, b = n_train, n_train + n_val
    return (
        dataset.subset(sorted(perm[:a])),
        dataset.subset(sorted(perm[a:b])),
        dataset.subset(sorted(perm[b:])),
    )


# synthetic data -------------------------------------------------------------

KINDS = ("bivariate_gaussian", "ar1", "sinusoid_mixture")


@dataclass(frozen=True)
class SynthSpec:
    kind: str = "bivariate_gaussian"
    K: int = 2
    L: int = 16
    n_samples: int = 200
    missing_rate: float = 0.0
    missing_pattern: str = "random"
    seed: int = 0
    rho: float = 0.8
    phi: float = 0.8
    sigma: float = 1.0
    mixing: float = 0.5
    # for the blocks pattern: features that receive missing blocks (default all)
    block_features: tuple | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown synthetic kind {self.kind!r}; expected one of {KINDS}")
        if self.kind == "bivariate_gaussian" and self.K != 2:
            raise ConfigError("bivariate_gaussian data has K=2")
        if self.K < 1 or self.L < 1 or self.n_samples < 1:
            raise ConfigError("K, L and n_samples must be positive")
        if not abs(self.rho) < 1 or not abs(self.phi) < 1:
            raise ConfigError("need |rho| < 1 and |phi| < 1")
        if not 0 <= self.missing_rate < 1:
            raise ConfigError("missing_rate must be in [0, 1)")
        if not 0 <= self.mixing < 1:
            raise ConfigError("mixing must be in [0, 1)")
        if self.missing_pattern not in ("random", "blocks"):
            raise ConfigError(f"unknown missing pattern {self.missing_pattern!r}")
        if self.block_features is not None:
            object.__setattr__(self, "block_features", tuple(int(k) for k in self.block_features))

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown synth keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["block_features"] is not None:
            d["block_features"] = list(d["block_features"])
        return d


def mixing_matrix(spec: SynthSpec) -> np.ndarray:
    """Cross-feature mixing ``(1 - m) I + m / K * 11^T`` for the AR(1) kind."""
    K, m = spec.K, spec.mixing
    return (1.0 - m) * np.eye(K) + m / K * np.ones((K, K))


def ar1_stationary_covariance(spec: SynthSpec) -> np.ndarray:
    """Stationary cross-feature covariance at a single time step."""
    A = mixing_matrix(spec)
    return spec.sigma**2 / (1.0 - spec.phi**2) * A @ A.T


def bivariate_conditional(rho: float, x_obs):
    """Mean and std of one standard-normal coordinate given the other."""
    return rho * np.asarray(x_obs, dtype=np.float64), math.sqrt(1.0 - rho**2)


def _values(spec: SynthSpec, rng: np.random.Generator) -> np.ndarray:
    n, K, L = spec.n_samples, spec.K, spec.L
    if spec.kind == "bivariate_gaussian":
        z = rng.standard_normal((n, 2, L))
        x1 = z[:, 0]
        x2 = spec.rho * z[:, 0] + math.sqrt(1.0 - spec.rho**2) * z[:, 1]
        return np.stack([x1, x2], axis=1)
    if spec.kind == "ar1":
        stat_sd = spec.sigma / math.sqrt(1.0 - spec.phi**2)
        z = np.empty((n, K, L))
        z[:, :, 0] = stat_sd * rng.standard_normal((n, K))
        for l in range(1, L):
            z[:, :, l] = spec.phi * z[:, :, l - 1] + spec.sigma * rng.standard_normal((n, K))
        return np.einsum("ij,njl->nil", mixing_matrix(spec), z)
    # sinusoid_mixture: two sinusoids per feature with random frequency and phase, plus noise
    t = np.arange(L, dtype=np.float64)
    freq = rng.uniform(0.05, 0.5, size=(n, K, 2, 1))
    phase = rng.uniform(0.0, 2 * math.pi, size=(n, K, 2, 1))
    amp = rng.uniform(0.5, 1.5, size=(n, K, 2, 1))
    wave = (amp * np.sin(freq * t + phase)).sum(axis=2)
    return wave + 0.1 * rng.standard_normal((n, K, L))


def missing_masks(spec: SynthSpec, rng: np.random.Generator) -> np.ndarray:
    """Observation masks (n, K, L); every sample keeps at least one observation."""
    n, K, L = spec.n_samples, spec.K, spec.L
    M = np.ones((n, K, L))
    if spec.missing_rate == 0:
        return M
    if spec.missing_pattern == "random":
        M = (rng.random((n, K, L)) >= spec.missing_rate).astype(np.float64)
    else:
        feats = range(K) if spec.block_features is None else spec.block_features
        length = int(round(spec.missing_rate * L))
        if length > 0:
            for i in range(n):
                for k in feats:
                    start = rng.integers(0, L - length + 1)
                    M[i, k, start : start + length] = 0.0
    for i in np.flatnonzero(M.reshape(n, -1).sum(axis=1) == 0):
        M[i].flat[rng.integers(K * L)] = 1.0
    return M


def generate_synthetic(spec: SynthSpec) -> Dataset:
    rng = np.random.default_rng(spec.seed)
    X = _values(spec, rng)
    M = missing_masks(spec, rng)
    s = np.arange(spec.L, dtype=np.float64)
    samples = [TimeSeriesSample(np.where(M[i] == 1, X[i], 0.0), M[i], s) for i in range(spec.n_samples)]
    return Dataset(samples, [f"x{k}" for k in range(spec.K)])


def with_masks(dataset: Dataset, masks) -> Dataset:
    """Replace observation masks (subsets of the current ones)."""
    return replace(dataset, samples=[s.with_mask(m * s.M) for s, m in zip(dataset.samples, masks)])

"""Probabilistic and point scores for imputation ensembles."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import DataError

N_TICKS = 19  # quantile levels 0.05, 0.10, ..., 0.95


@dataclass
class ScoreReport:
    crps: float
    mae: float
    rmse: float
    n_targets: int
    n_samples: int
    crps_sum: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def quantile_loss(alpha: float, q, z):
    """Pinball loss (alpha - 1[z < q]) * (z - q)."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"quantile level must be in (0, 1), got {alpha}")
    q = np.asarray(q, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    return (alpha - (z < q)) * (z - q)


def empirical_quantiles(draws) -> np.ndarray:
    """Quantiles at the 19 ticks, shape (19, ...) for draws of shape (n, ...).

    The level-p quantile is the ceil(p * n)-th order statistic.
    """
    draws = np.sort(np.asarray(draws, dtype=np.float64), axis=0)
    n = draws.shape[0]
    if n == 0:
        raise DataError("CRPS needs at least one draw")
    i = np.arange(1, N_TICKS + 1)
    # ceil(i * n / 20) in integer arithmetic; 0.05 * i * n is not exact in floating point
    ranks = -(-(i * n) // 20)
    return draws[ranks - 1]


def _crps_ticks(draws, z) -> np.ndarray:
    q = empirical_quantiles(draws)
    z = np.asarray(z, dtype=np.float64)
    total = np.zeros(np.broadcast(q[0], z).shape)
    for i in range(N_TICKS):
        total = total + 2.0 * quantile_loss(0.05 * (i + 1), q[i], z)
    return total / N_TICKS


def crps_discretized(draws, z) -> float:
    """CRPS from pinball losses at 19 quantile levels of the ensemble."""
    draws = np.asarray(draws, dtype=np.float64).reshape(-1)
    return float(_crps_ticks(draws, z))


def crps_exact_empirical(draws, z) -> float:
    """Exact CRPS of the empirical distribution: E|X - z| - E|X - X'| / 2."""
    x = np.sort(np.asarray(draws, dtype=np.float64).reshape(-1))
    n = x.size
    if n == 0:
        raise DataError("CRPS needs at least one draw")
    first = np.abs(x - z).mean()
    # sum_{i,j} |x_i - x_j| for sorted x equals 2 * sum_i (2i - n - 1) x_i with 1-based i
    weights = 2.0 * np.arange(1, n + 1) - n - 1
    pair_mean = 2.0 * np.dot(weights, x) / (n * n)
    return float(first - 0.5 * pair_mean)


def _flatten_targets(draws, truths, target_mask=None):
    draws = np.asarray(draws, dtype=np.float64)
    truths = np.asarray(truths, dtype=np.float64)
    if target_mask is not None:
        tm = np.asarray(target_mask) == 1
        draws = draws[:, tm]
        truths = truths[tm]
    else:
        draws = draws.reshape(draws.shape[0], -1)
        truths = truths.reshape(-1)
    if draws.shape[1] != truths.shape[0]:
        raise ValueError("draws and truths cover different target sets")
    if truths.size == 0:
        raise DataError("no target positions to score")
    return draws, truths


def crps_per_position(draws, truths, target_mask=None) -> np.ndarray:
    d, z = _flatten_targets(draws, truths, target_mask)
    return _crps_ticks(d, z)


def crps_normalized_average(draws, truths, target_mask=None) -> float:
    """Sum of per-position CRPS divided by the sum of |truth|.

    ``draws`` is (n, ...) matching ``truths``; with ``target_mask`` only the
    marked positions are scored.
    """
    d, z = _flatten_targets(draws, truths, target_mask)
    denom = np.abs(z).sum()
    if denom <= 0:
        raise DataError("normalized CRPS is undefined when all truths are zero")
    return float(_crps_ticks(d, z).sum() / denom)


def crps_sum(draws, truths, target_mask=None) -> float:
    """CRPS of the across-feature sum per time step, normalized by sum of |truth|.

    ``draws`` is (n, K, L) (or (n, B, K, L) for several series); a time
    column is scored when every feature in it is a target.
    """
    draws = np.asarray(draws, dtype=np.float64)
    truths = np.asarray(truths, dtype=np.float64)
    if target_mask is None:
        target_mask = np.ones(truths.shape)
    tm = np.asarray(target_mask) == 1
    full = tm.all(axis=-2)  # (..., L)
    partial = tm.any(axis=-2) & ~full
    if partial.any():
        raise DataError("CRPS-sum needs every feature imputed at each scored time step")
    if not full.any():
        raise DataError("no time steps to score")
    sums = np.where(tm, draws, 0.0).sum(axis=-2)[:, full]
    truth_sums = np.where(tm, truths, 0.0).sum(axis=-2)[full]
    denom = np.abs(truths[tm]).sum()
    if denom <= 0:
        raise DataError("CRPS-sum is undefined when all truths are zero")
    return float(_crps_ticks(sums, truth_sums).sum() / denom)


def mae(pred, truth) -> float:
    err = np.asarray(pred, dtype=np.float64) - np.asarray(truth, dtype=np.float64)
    if err.size == 0:
        raise DataError("no target positions to score")
    return float(np.abs(err).mean())


def rmse(pred, truth) -> float:
    err = np.asarray(pred, dtype=np.float64) - np.asarray(truth, dtype=np.float64)
    if err.size == 0:
        raise DataError("no target positions to score")
    return float(np.sqrt((err**2).mean()))


def score_ensembles(ensembles, truths, with_crps_sum: bool = False) -> ScoreReport:
    """Pool every target position of several ensembles into one report.

    ``truths`` holds one K x L grid per ensemble with true values at targets.
    """
    all_draws, all_truth, medians = [], [], []
    for ens, truth in zip(ensembles, truths):
        tm = ens.target_mask == 1
        vals = ens.draws[:, tm]
        all_draws.append(vals)
        all_truth.append(np.asarray(truth, dtype=np.float64)[tm])
        medians.append(np.median(vals, axis=0))
    n = {e.n_samples for e in ensembles}
    if len(n) != 1:
        raise DataError("all ensembles must have the same number of draws")
    draws = np.concatenate(all_draws, axis=1)
    truth = np.concatenate(all_truth)
    med = np.concatenate(medians)
    report = ScoreReport(
        crps=crps_normalized_average(draws, truth),
        mae=mae(med, truth),
        rmse=rmse(med, truth),
        n_targets=int(truth.size),
        n_samples=n.pop(),
    )
    if with_crps_sum:
        report.crps_sum = _pooled_crps_sum(ensembles, truths)
    return report


def _pooled_crps_sum(ensembles, truths) -> float | None:
    """CRPS-sum over several series; None unless every target column is complete."""
    num, den = 0.0, 0.0
    for ens, truth in zip(ensembles, truths):
        tm = ens.target_mask == 1
        if (tm.any(axis=0) & ~tm.all(axis=0)).any():
            return None
        cols = tm.all(axis=0)
        if not cols.any():
            continue
        sums = ens.draws[:, :, cols].sum(axis=1)
        tsum = np.asarray(truth, dtype=np.float64)[:, cols].sum(axis=0)
        num += float(_crps_ticks(sums, tsum).sum())
        den += float(np.abs(np.asarray(truth, dtype=np.float64)[tm]).sum())
    return num / den if den > 0 else None

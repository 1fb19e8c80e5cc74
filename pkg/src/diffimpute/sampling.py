"""Reverse-chain imputation, ensembles and median point estimates.

All chains of a call are batched through the network together; each chain
owns its random stream so results do not depend on how rows are batched.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import torch

from .denoiser import DenoiserModel
from .errors import ConfigError
from .masking import TimeSeriesSample
from .schedule import NoiseSchedule, reverse_step

MAX_ROWS = 256


@dataclass
class ImputationEnsemble:
    draws: np.ndarray  # (n, K, L); NaN off the target support
    target_mask: np.ndarray
    observed: TimeSeriesSample | None = None

    @property
    def n_samples(self) -> int:
        return self.draws.shape[0]

    def target_index(self) -> np.ndarray:
        """Row-major (k, l) pairs of the target positions."""
        return np.argwhere(self.target_mask == 1)

    def target_values(self) -> np.ndarray:
        """Draws at target positions, shape (n, n_targets), row-major order."""
        return self.draws[:, self.target_mask == 1]

    def materialize(self) -> np.ndarray:
        """Full grids: draws at targets, observed values elsewhere (NaN if unobserved)."""
        full = np.broadcast_to(self.observed.X, self.draws.shape).copy()
        full[:, self.target_mask == 1] = self.draws[:, self.target_mask == 1]
        return full

    def subset(self, n: int) -> "ImputationEnsemble":
        return ImputationEnsemble(self.draws[:n], self.target_mask, self.observed)


@dataclass
class _Chain:
    sample: TimeSeriesSample
    target: np.ndarray
    rng: np.random.Generator


def _check_model(model: DenoiserModel, sched: NoiseSchedule, unconditional: bool, K: int) -> None:
    if model.config.T != sched.T:
        raise ConfigError(f"model was built for T={model.config.T}, schedule has T={sched.T}")
    if model.config.unconditional != unconditional:
        kind = "unconditional" if model.config.unconditional else "conditional"
        raise ConfigError(f"a {kind} model cannot run the {'unconditional' if unconditional else 'conditional'} sampler")
    if K > model.config.n_features:
        raise ConfigError(f"model embeds {model.config.n_features} features, sample has {K}")


def _run_chains(model: DenoiserModel, sched: NoiseSchedule, chains: Sequence[_Chain], unconditional: bool) -> list:
    B = len(chains)
    K = chains[0].sample.K
    Lmax = max(c.sample.L for c in chains)
    X = np.zeros((B, K, Lmax))
    cond = np.zeros((B, K, Lmax))
    support = np.zeros((B, K, Lmax))
    ts = np.zeros((B, Lmax))
    pad = np.zeros((B, Lmax))
    for i, c in enumerate(chains):
        L = c.sample.L
        X[i, :, :L] = c.sample.filled()
        cond[i, :, :L] = c.sample.M * (1.0 - c.target)
        # conditional chains live on the targets only; the unconditional one on every free entry
        support[i, :, :L] = (1.0 - cond[i, :, :L]) if unconditional else c.target
        ts[i, :L] = c.sample.s
        pad[i, :L] = 1.0

    def normals():
        z = np.zeros((B, K, Lmax))
        for i, c in enumerate(chains):
            z[i, :, : c.sample.L] = c.rng.standard_normal((K, c.sample.L))
        return z

    x = normals() * support
    cond_obs = cond * X
    ts_t, pad_t = torch.as_tensor(ts), torch.as_tensor(pad)
    cond_t = torch.as_tensor(cond)
    zeros_t = torch.zeros_like(cond_t)
    with torch.no_grad():
        # side information is fixed along the chain; duck-typed models may not offer the cache
        extra = {}
        if hasattr(model, "side_terms"):
            extra["side_terms"] = model.side_terms(ts_t, zeros_t if unconditional else cond_t)
        for t in range(sched.T, 0, -1):
            step = torch.full((B,), t, dtype=torch.long)
            if unconditional:
                a = sched.alpha[t - 1]
                noisy_obs = np.sqrt(a) * cond_obs + np.sqrt(1.0 - a) * normals()
                x_in = cond * noisy_obs + x
                eps_hat = model(torch.as_tensor(x_in), zeros_t, zeros_t, step, ts_t, pad_t, **extra).numpy()
            else:
                x_in = x
                eps_hat = model(
                    torch.as_tensor(x_in), torch.as_tensor(cond_obs), cond_t, step, ts_t, pad_t, **extra
                ).numpy()
            z = normals() if t > 1 else None
            x = reverse_step(x_in, t, eps_hat, z, sched) * support
    out = []
    for i, c in enumerate(chains):
        draw = np.full((K, c.sample.L), np.nan)
        tm = c.target == 1
        draw[tm] = x[i, :, : c.sample.L][tm]
        out.append(draw)
    return out


def _impute_many(model, sched, chains: list, unconditional: bool, max_rows: int = MAX_ROWS) -> list:
    if not chains:
        return []
    _check_model(model, sched, unconditional, chains[0].sample.K)
    out = [None] * len(chains)
    live = [i for i, c in enumerate(chains) if c.target.sum() > 0]
    for i, c in enumerate(chains):
        if c.target.sum() == 0:
            out[i] = np.full(c.target.shape, np.nan)
    for start in range(0, len(live), max_rows):
        idx = live[start : start + max_rows]
        for i, d in zip(idx, _run_chains(model, sched, [chains[i] for i in idx], unconditional)):
            out[i] = d
    return out


def _as_target(sample: TimeSeriesSample, target_mask) -> np.ndarray:
    target = np.asarray(target_mask, dtype=np.float64)
    if target.shape != sample.M.shape:
        raise ValueError(f"target mask shape {target.shape} != sample shape {sample.M.shape}")
    if not np.isin(target, (0.0, 1.0)).all():
        raise ValueError("target mask must be binary")
    return target


def conditional_impute(model, sched, sample: TimeSeriesSample, target_mask, rng: np.random.Generator) -> np.ndarray:
    """One draw of the target entries given the sample's remaining observations.

    Returns a K x L grid holding the draw at target positions and NaN elsewhere.
    """
    chain = _Chain(sample, _as_target(sample, target_mask), rng)
    return _impute_many(model, sched, [chain], unconditional=False)[0]


def unconditional_impute(model_u, sched, sample: TimeSeriesSample, target_mask, rng: np.random.Generator) -> np.ndarray:
    """Draw with an unconditional model, re-noising the observations at every step."""
    chain = _Chain(sample, _as_target(sample, target_mask), rng)
    return _impute_many(model_u, sched, [chain], unconditional=True)[0]


def _streams(rng, n: int) -> list:
    if isinstance(rng, np.random.Generator):
        return rng.spawn(n)
    if isinstance(rng, np.random.SeedSequence):
        return [np.random.default_rng(s) for s in rng.spawn(n)]
    return [np.random.default_rng(s) for s in np.random.SeedSequence(rng).spawn(n)]


def generate_ensemble(
    impute_fn: Callable[[np.random.Generator], np.ndarray],
    n: int,
    rng,
    target_mask=None,
    observed: TimeSeriesSample | None = None,
) -> ImputationEnsemble:
    """``n`` draws of ``impute_fn``, each with its own child stream of ``rng``."""
    if n < 1:
        raise ConfigError("ensemble size must be at least 1")
    draws = np.stack([impute_fn(r) for r in _streams(rng, n)])
    if target_mask is None:
        target_mask = np.isfinite(draws[0]).astype(np.float64)
    return ImputationEnsemble(draws=draws, target_mask=np.asarray(target_mask, dtype=np.float64), observed=observed)


def impute_samples(
    model: DenoiserModel,
    sched: NoiseSchedule,
    samples: Sequence[TimeSeriesSample],
    target_masks: Sequence,
    n: int,
    seed: int,
    mode: str = "conditional",
    max_rows: int = MAX_ROWS,
) -> list[ImputationEnsemble]:
    """Ensembles for many samples at once.

    Sample ``i`` uses child stream ``i`` of ``SeedSequence(seed)``; draw ``j``
    uses child ``j`` of that, matching :func:`generate_ensemble` called with
    ``np.random.default_rng(child_i)``.
    """
    if mode not in ("conditional", "unconditional"):
        raise ConfigError(f"unknown imputation mode {mode!r}")
    if n < 1:
        raise ConfigError("ensemble size must be at least 1")
    chains = []
    for i, (s, ss) in enumerate(zip(samples, np.random.SeedSequence(seed).spawn(len(samples)))):
        target = _as_target(s, target_masks[i])
        for r in _streams(np.random.default_rng(ss), n):
            chains.append(_Chain(s, target, r))
    draws = _impute_many(model, sched, chains, mode == "unconditional", max_rows)
    out = []
    for i, s in enumerate(samples):
        d = np.stack(draws[i * n : (i + 1) * n])
        out.append(ImputationEnsemble(draws=d, target_mask=_as_target(s, target_masks[i]), observed=s))
    return out


def median_impute(ens: ImputationEnsemble) -> np.ndarray:
    """Per-position median across draws; NaN off the targets."""
    med = np.full(ens.target_mask.shape, np.nan)
    tm = ens.target_mask == 1
    med[tm] = np.median(ens.draws[:, tm], axis=0)
    return med

"""Self-supervised training loop for the conditional and unconditional models."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Sequence

import numpy as np
import torch

from .denoiser import DenoiserConfig, DenoiserInput, DenoiserModel, masked_noise_loss
from .errors import ConfigError
from .masking import (
    STRATEGIES,
    MaskSplit,
    TimeSeriesSample,
    load_pattern_csv,
    make_strategy,
    random_split,
)
from .schedule import NoiseSchedule

log = logging.getLogger(__name__)

Strategy = Callable[[TimeSeriesSample, np.random.Generator], MaskSplit]


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 16
    lr: float = 1e-3
    # (fraction of total epochs, multiplicative factor); applied once the epoch passes the point
    lr_decay_points: tuple = ((0.75, 0.1), (0.9, 0.1))
    strategy: str = "random"
    test_pattern_file: str | None = None
    seed: int = 0
    adam_betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    grad_clip: float | None = None
    val_seed: int = 12345

    def __post_init__(self):
        if int(self.epochs) != self.epochs or self.epochs < 1:
            raise ConfigError("epochs must be a positive integer")
        if int(self.batch_size) != self.batch_size or self.batch_size < 1:
            raise ConfigError("batch_size must be a positive integer")
        if not self.lr > 0:
            raise ConfigError("lr must be positive")
        points = tuple(tuple(p) for p in self.lr_decay_points)
        fracs = [p[0] for p in points]
        if any(not 0 < f <= 1 for f in fracs) or any(b <= a for a, b in zip(fracs, fracs[1:])):
            raise ConfigError("lr decay points must be strictly increasing in (0, 1]")
        object.__setattr__(self, "lr_decay_points", points)
        object.__setattr__(self, "adam_betas", tuple(self.adam_betas))
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy!r}; expected one of {STRATEGIES}")
        if self.grad_clip is not None and not self.grad_clip > 0:
            raise ConfigError("grad_clip must be positive when set")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lr_decay_points"] = [list(p) for p in self.lr_decay_points]
        d["adam_betas"] = list(self.adam_betas)
        return d


def lr_at_epoch(cfg: TrainConfig, epoch: int) -> float:
    """Learning rate for 1-based ``epoch``."""
    lr = cfg.lr
    for frac, factor in cfg.lr_decay_points:
        if epoch > math.floor(frac * cfg.epochs + 1e-9):
            lr *= factor
    return lr


@dataclass
class Batch:
    inp: DenoiserInput
    eps: np.ndarray
    target_mask: np.ndarray


def pad_samples(samples: Sequence[TimeSeriesSample]) -> dict:
    """Zero-pad samples to a common length; returns stacked numpy grids."""
    K = samples[0].K
    if any(s.K != K for s in samples):
        raise ConfigError("all samples in a batch must have the same feature count")
    Lmax = max(s.L for s in samples)
    B = len(samples)
    X = np.zeros((B, K, Lmax))
    M = np.zeros((B, K, Lmax))
    ts = np.zeros((B, Lmax))
    pad = np.zeros((B, Lmax))
    for i, s in enumerate(samples):
        X[i, :, : s.L] = s.filled()
        M[i, :, : s.L] = s.M
        ts[i, : s.L] = s.s
        pad[i, : s.L] = 1.0
    return dict(X=X, M=M, timestamps=ts, pad=pad, lengths=[s.L for s in samples])


def make_batch(
    samples: Sequence[TimeSeriesSample],
    sched: NoiseSchedule,
    rng: np.random.Generator,
    strategy: Strategy | None,
    unconditional: bool = False,
) -> Batch:
    """Draw steps, target splits and noise for one batch.

    Per sample the draws are consumed in the order: step, split, noise.
    """
    g = pad_samples(samples)
    B, K, Lmax = g["X"].shape
    cond = np.zeros((B, K, Lmax))
    target = np.zeros((B, K, Lmax))
    eps = np.zeros((B, K, Lmax))
    t = np.zeros(B, dtype=np.int64)
    for i, s in enumerate(samples):
        t[i] = rng.integers(1, sched.T + 1)
        if unconditional:
            target[i, :, : s.L] = s.M
        else:
            split = strategy(s, rng)
            cond[i, :, : s.L] = split.cond_mask
            target[i, :, : s.L] = split.target_mask
        eps[i, :, : s.L] = rng.standard_normal((K, s.L))
    a = sched.alpha[t - 1][:, None, None]
    if unconditional:
        # missing entries carry the dummy value 0 and are diffused like the rest
        noisy = (np.sqrt(a) * g["X"] + np.sqrt(1.0 - a) * eps) * g["pad"][:, None, :]
        cond_obs = np.zeros_like(noisy)
    else:
        # extended targets: everything that is not conditioning, missing entries zero-filled
        free = (1.0 - cond) * g["pad"][:, None, :]
        eps = eps * free
        noisy = np.sqrt(a) * (target * g["X"]) + np.sqrt(1.0 - a) * eps
        cond_obs = cond * g["X"]
    inp = DenoiserInput(
        noisy_target=noisy, cond_obs=cond_obs, cond_mask=cond, t=t,
        timestamps=g["timestamps"], pad_mask=g["pad"],
    )
    return Batch(inp=inp, eps=eps, target_mask=target)


def batch_loss(model: DenoiserModel, batch: Batch) -> torch.Tensor:
    pred = model.run(batch.inp)
    return masked_noise_loss(pred, torch.as_tensor(batch.eps), torch.as_tensor(batch.target_mask))


def make_optimizer(model: DenoiserModel, cfg: TrainConfig) -> torch.optim.Optimizer:
    return torch.optim.Adam(model.parameters(), lr=cfg.lr, betas=cfg.adam_betas, eps=cfg.adam_eps, foreach=True)


def _apply(model, optimizer, batch: Batch, grad_clip=None) -> float:
    optimizer.zero_grad(set_to_none=False)
    loss = batch_loss(model, batch)
    loss.backward()
    if grad_clip is not None:
        torch.nn.utils.clip_grad_norm_(model.parameters(), grad_clip)
    optimizer.step()
    return float(loss.detach())


def train_step(model, optimizer, sched, samples, strategy: Strategy, rng, grad_clip=None) -> float:
    """One optimizer update on a batch; returns the pre-update loss."""
    return _apply(model, optimizer, make_batch(samples, sched, rng, strategy), grad_clip)


def train_step_unconditional(model_u, optimizer, sched, samples, rng, grad_clip=None) -> float:
    return _apply(model_u, optimizer, make_batch(samples, sched, rng, None, unconditional=True), grad_clip)


class ValidationSet:
    """Validation batches with frozen steps, splits and noise."""

    def __init__(self, samples, sched, batch_size, seed, unconditional=False):
        rng = np.random.default_rng(seed)
        self.batches = [
            make_batch(samples[i : i + batch_size], sched, rng, random_split, unconditional)
            for i in range(0, len(samples), batch_size)
        ]

    def loss(self, model: DenoiserModel) -> float:
        num, den = 0.0, 0.0
        with torch.no_grad():
            for b in self.batches:
                pred = model.run(b.inp).numpy()
                num += float((((b.eps - pred) * b.target_mask) ** 2).sum())
                den += float(b.target_mask.sum())
        return num / den


@dataclass
class TrainResult:
    model: DenoiserModel
    history: list = field(default_factory=list)
    best_epoch: int = 0
    best_val_loss: float = float("nan")


def resolve_strategy(cfg: TrainConfig, train: Sequence[TimeSeriesSample]) -> Strategy:
    pattern = None
    if cfg.strategy == "test_pattern":
        if cfg.test_pattern_file is None:
            raise ConfigError("strategy test_pattern needs test_pattern_file")
        pattern = load_pattern_csv(cfg.test_pattern_file)
    return make_strategy(cfg.strategy, pattern_source=list(train), test_pattern=pattern)


def run_training(
    train: Sequence[TimeSeriesSample],
    val: Sequence[TimeSeriesSample] | None,
    model_config: DenoiserConfig,
    cfg: TrainConfig,
    sched: NoiseSchedule,
    strategy: Strategy | None = None,
    model: DenoiserModel | None = None,
) -> TrainResult:
    """Train for ``cfg.epochs`` epochs and keep the best-validation parameters."""
    train = list(train)
    if not train:
        raise ConfigError("training split is empty")
    if model_config.T != sched.T:
        raise ConfigError(f"model T={model_config.T} does not match schedule T={sched.T}")
    uncond = model_config.unconditional
    if strategy is None and not uncond:
        strategy = resolve_strategy(cfg, train)
    if model is None:
        model = DenoiserModel(model_config, seed=cfg.seed)
    optimizer = make_optimizer(model, cfg)
    vset = ValidationSet(list(val), sched, cfg.batch_size, cfg.val_seed, uncond) if val else None

    result = TrainResult(model=model)
    best_flat = model.get_flat()
    best = math.inf
    for epoch in range(1, cfg.epochs + 1):
        lr = lr_at_epoch(cfg, epoch)
        for group in optimizer.param_groups:
            group["lr"] = lr
        order = np.random.default_rng([cfg.seed, epoch, 0]).permutation(len(train))
        rng = np.random.default_rng([cfg.seed, epoch, 1])
        losses = []
        model.train()
        for start in range(0, len(train), cfg.batch_size):
            chunk = [train[i] for i in order[start : start + cfg.batch_size]]
            if uncond:
                losses.append(train_step_unconditional(model, optimizer, sched, chunk, rng, cfg.grad_clip))
            else:
                losses.append(train_step(model, optimizer, sched, chunk, strategy, rng, cfg.grad_clip))
        model.eval()
        train_loss = float(np.mean(losses))
        val_loss = vset.loss(model) if vset else float("nan")
        result.history.append({"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss, "lr": lr})
        score = val_loss if vset else train_loss
        if score < best:
            best = score
            best_flat = model.get_flat()
            result.best_epoch = epoch
        log.debug("epoch %d lr %.0e train %.5f val %.5f", epoch, lr, train_loss, val_loss)
    model.set_flat(best_flat)
    result.best_val_loss = best if vset else float("nan")
    return result

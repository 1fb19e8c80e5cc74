"""Noise schedule and closed-form DDPM kernels.

Steps are 1-based throughout: ``t`` runs over ``1..T`` and the arrays held
by :class:`NoiseSchedule` store step ``t`` at index ``t - 1``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step noise levels.

    ``beta[t-1]`` is the variance added at step t, ``alpha_hat = 1 - beta``,
    ``alpha`` the running product of ``alpha_hat`` and ``beta_tilde`` the
    posterior variance used by the reverse kernel.
    """

    T: int
    beta: np.ndarray
    alpha_hat: np.ndarray
    alpha: np.ndarray
    beta_tilde: np.ndarray

    def __post_init__(self):
        for name in ("beta", "alpha_hat", "alpha", "beta_tilde"):
            arr = getattr(self, name)
            arr.setflags(write=False)
            if arr.shape != (self.T,):
                raise ConfigError(f"{name} must have length T={self.T}")

    def check_step(self, t: int) -> int:
        t = int(t)
        if not 1 <= t <= self.T:
            raise ValueError(f"diffusion step {t} outside 1..{self.T}")
        return t

    def table(self) -> list[tuple[int, float, float, float]]:
        return [
            (t, float(self.beta[t - 1]), float(self.alpha[t - 1]), float(self.beta_tilde[t - 1]))
            for t in range(1, self.T + 1)
        ]


def schedule_from_betas(beta) -> NoiseSchedule:
    beta = np.asarray(beta, dtype=np.float64).copy()
    T = beta.shape[0]
    alpha_hat = 1.0 - beta
    # running product, not exp(cumsum(log)), so alpha[t] == alpha[t-1] * alpha_hat[t] exactly
    alpha = np.empty(T)
    acc = 1.0
    for i in range(T):
        acc = acc * alpha_hat[i]
        alpha[i] = acc
    beta_tilde = np.empty(T)
    beta_tilde[0] = beta[0]
    beta_tilde[1:] = (1.0 - alpha[:-1]) / (1.0 - alpha[1:]) * beta[1:]
    return NoiseSchedule(T=T, beta=beta, alpha_hat=alpha_hat, alpha=alpha, beta_tilde=beta_tilde)


def build_quadratic_schedule(T: int = 50, beta1: float = 1e-4, betaT: float = 0.5) -> NoiseSchedule:
    """Betas interpolated linearly in sqrt-space between ``beta1`` and ``betaT``."""
    if int(T) != T or T < 2:
        raise ConfigError(f"T must be an integer >= 2, got {T}")
    if not (0.0 < beta1 < betaT < 1.0):
        raise ConfigError(f"need 0 < beta1 < betaT < 1, got beta1={beta1}, betaT={betaT}")
    T = int(T)
    t = np.arange(1, T + 1, dtype=np.float64)
    beta = ((T - t) / (T - 1) * np.sqrt(beta1) + (t - 1) / (T - 1) * np.sqrt(betaT)) ** 2
    # pin the endpoints; the interpolation can be off by an ulp
    beta[0] = beta1
    beta[-1] = betaT
    return schedule_from_betas(beta)


def forward_diffuse(x0, t: int, eps, sched: NoiseSchedule):
    """Sample q(x_t | x_0) given the standard-normal draw ``eps``.

    Works on numpy arrays and torch tensors alike.
    """
    t = sched.check_step(t)
    if tuple(x0.shape) != tuple(eps.shape):
        raise ValueError(f"eps shape {tuple(eps.shape)} != x0 shape {tuple(x0.shape)}")
    a = sched.alpha[t - 1]
    return np.sqrt(a) * x0 + np.sqrt(1.0 - a) * eps


def ddpm_mean(x_t, t: int, eps_hat, sched: NoiseSchedule):
    t = sched.check_step(t)
    b = sched.beta[t - 1]
    coef = b / np.sqrt(1.0 - sched.alpha[t - 1])
    return (x_t - coef * eps_hat) / np.sqrt(sched.alpha_hat[t - 1])


def ddpm_sigma(t: int, sched: NoiseSchedule) -> float:
    t = sched.check_step(t)
    return float(np.sqrt(sched.beta_tilde[t - 1]))


def reverse_step(x_t, t: int, eps_hat, z, sched: NoiseSchedule):
    """One ancestral step x_t -> x_{t-1}. No noise is added at t = 1."""
    t = sched.check_step(t)
    shape = tuple(x_t.shape)
    if tuple(eps_hat.shape) != shape or (z is not None and tuple(z.shape) != shape):
        raise ValueError("x_t, eps_hat and z must share a shape")
    mean = ddpm_mean(x_t, t, eps_hat, sched)
    if t == 1:
        return mean
    if z is None:
        raise ValueError(f"step {t} needs a noise draw z")
    return mean + ddpm_sigma(t, sched) * z

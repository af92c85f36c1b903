"""Linear-beta DDPM noise schedule and the forward kernel."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ValidationError

DEFAULT_T = 1000
DEFAULT_BETA_MIN = 1e-4
DEFAULT_BETA_MAX = 0.02


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    """Per-step variances, stored 0-based: ``betas[t - 1]`` is beta_t."""

    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray

    @property
    def T(self) -> int:
        return len(self.betas)

    def beta(self, t):
        return self.betas[np.asarray(t) - 1]

    def alpha(self, t):
        return self.alphas[np.asarray(t) - 1]

    def alpha_bar(self, t):
        return self.alpha_bars[np.asarray(t) - 1]

    def check_t(self, t) -> None:
        t = np.asarray(t)
        if t.size and (t.min() < 1 or t.max() > self.T):
            raise ValidationError(f"timestep out of range [1, {self.T}]: {t.min()}..{t.max()}")

    def to_config(self) -> dict:
        return {"T": self.T, "beta_min": float(self.betas[0]), "beta_max": float(self.betas[-1])}


def make_schedule(T: int = DEFAULT_T, beta_min: float = DEFAULT_BETA_MIN,
                  beta_max: float = DEFAULT_BETA_MAX) -> NoiseSchedule:
    if int(T) != T or T < 1:
        raise ValidationError(f"T must be a positive integer, got {T}")
    if not 0.0 < beta_min < beta_max < 1.0:
        raise ValidationError(f"need 0 < beta_min < beta_max < 1, got {beta_min}, {beta_max}")
    T = int(T)
    if T == 1:
        betas = np.array([beta_min], dtype=float)
    else:
        betas = beta_min + np.arange(T) / (T - 1) * (beta_max - beta_min)
    alphas = 1.0 - betas
    alpha_bars = np.empty(T)
    acc = 1.0
    for i, a in enumerate(alphas):
        acc = acc * a
        alpha_bars[i] = acc
    return NoiseSchedule(betas, alphas, alpha_bars)


def forward_diffuse(x0, t, eps, schedule: NoiseSchedule) -> np.ndarray:
    """``x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps``.

    ``t`` may be a scalar or one timestep per row of a batch.
    """
    x0 = np.asarray(x0, dtype=float)
    eps = np.asarray(eps, dtype=float)
    if x0.shape != eps.shape:
        raise ValidationError(f"x0 {x0.shape} and eps {eps.shape} differ in shape")
    schedule.check_t(t)
    ab = schedule.alpha_bar(t)
    if np.ndim(ab):
        ab = ab.reshape(-1, *([1] * (x0.ndim - 1)))
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps

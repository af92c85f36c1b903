"""Wireless transport models.

Semantic bits travel over an ideal digital link. Intermediate diffusion
states travel over an AWGN channel, one real symbol per pixel, and the added
noise is folded back into the diffusion process by moving the receiver to a
later (noisier) timestep.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from .errors import ValidationError

if TYPE_CHECKING:
    from .diffusion.schedule import NoiseSchedule

NOISELESS = math.inf


@dataclass(frozen=True)
class ChannelConfig:
    snr_db: float
    seed: int | None = None

    def __post_init__(self):
        if math.isnan(self.snr_db) or self.snr_db == -math.inf:
            raise ValidationError(f"snr_db must be finite or +inf, got {self.snr_db}")

    @property
    def noiseless(self) -> bool:
        return self.snr_db == math.inf


@dataclass(frozen=True, eq=False)
class AnalogFrame:
    symbols: np.ndarray

    @property
    def measured_power(self) -> float:
        return float(np.mean(np.square(self.symbols)))


@dataclass(frozen=True)
class RemapResult:
    t_prime: int
    scale_c: float


def noise_variance(signal_power: float, snr_db: float) -> float:
    if snr_db == math.inf:
        return 0.0
    return signal_power / 10.0 ** (snr_db / 10.0)


def awgn_transmit(frame: AnalogFrame, cfg: ChannelConfig, rng=None) -> AnalogFrame:
    """Add white Gaussian noise at the configured SNR relative to the frame's own power.

    ``rng`` defaults to a generator seeded from ``cfg.seed``.
    """
    x = np.asarray(frame.symbols, dtype=float)
    if cfg.noiseless:
        return AnalogFrame(x.copy())
    power = frame.measured_power
    if power <= 0.0:
        raise ValidationError("cannot define SNR for a zero-power frame")
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    sigma = math.sqrt(noise_variance(power, cfg.snr_db))
    return AnalogFrame(x + sigma * rng.standard_normal(x.shape))


def transmit_digital(bits):
    """Distortion-free digital link: returns a copy of the input bits."""
    return np.array(bits, dtype=np.uint8, copy=True)


def effective_timestep(s: int, snr_db: float, schedule: NoiseSchedule,
                       signal_power: float = 1.0, noise_var: float | None = None) -> RemapResult:
    """Timestep whose forward marginal matches ``x_s`` plus channel noise.

    The received frame ``x_s + n`` has noise-to-signal ratio
    ``((1 - abar_s) + var) / abar_s``. The smallest ``t' >= s`` with at least
    that ratio is returned, together with ``c = sqrt(abar_t' / abar_s)`` that
    the receiver multiplies into the frame before denoising from ``t'``.
    ``noise_var`` overrides the variance implied by ``snr_db`` and
    ``signal_power``.
    """
    if int(s) != s or not 1 <= s <= schedule.T:
        raise ValidationError(f"source step {s} outside [1, {schedule.T}]")
    s = int(s)
    var = noise_variance(signal_power, snr_db) if noise_var is None else float(noise_var)
    if var < 0:
        raise ValidationError("noise variance must be non-negative")
    if var == 0.0:
        return RemapResult(s, 1.0)
    ab = schedule.alpha_bars
    target = ((1.0 - ab[s - 1]) + var) / ab[s - 1]
    nsr = (1.0 - ab[s - 1:]) / ab[s - 1:]
    hits = np.nonzero(nsr >= target)[0]
    t_prime = s + int(hits[0]) if hits.size else schedule.T
    scale = math.sqrt(ab[t_prime - 1] / ab[s - 1])
    return RemapResult(t_prime, min(scale, 1.0))

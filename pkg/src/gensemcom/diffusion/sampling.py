"""Ancestral DDPM sampling, whole or split between an edge and a receiver.

Randomness contract: one master seed yields independent streams for the
initial Gaussian state, for the injected noise of every reverse step
(keyed by timestep), and for the analog channel. A reverse step at timestep
``t`` therefore draws the same noise whichever model executes it, which is
what makes a split run with two identical models reproduce a plain run.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..channel import AnalogFrame, ChannelConfig, awgn_transmit, effective_timestep
from ..errors import PlanError
from .schedule import NoiseSchedule

MAX_OFFLOAD_STEPS = 650

_INIT, _STEP, _CHANNEL = 0, 1, 2


class NoiseStreams:
    def __init__(self, seed):
        self.seed = seed.entropy if isinstance(seed, np.random.SeedSequence) else int(seed)

    def _gen(self, *key) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=key))

    def initial(self, shape) -> np.ndarray:
        return self._gen(_INIT).standard_normal(shape)

    def step(self, t: int, shape) -> np.ndarray:
        return self._gen(_STEP, int(t)).standard_normal(shape)

    def channel(self) -> np.random.Generator:
        return self._gen(_CHANNEL)


@dataclass(frozen=True)
class SplitPlan:
    s_offload: int = 0

    def validate(self, T: int) -> None:
        k = self.s_offload
        if int(k) != k or k < 0 or k > MAX_OFFLOAD_STEPS or k > T:
            raise PlanError(f"offloaded steps {k} outside [0, min({MAX_OFFLOAD_STEPS}, {T})]")


def reverse_step(model, x_t, t: int, cond, rng, schedule: NoiseSchedule, noise=None) -> np.ndarray:
    """One ancestral step ``x_t -> x_{t-1}``; no noise is added at ``t == 1``.

    ``noise`` (standard normal, same shape as ``x_t``) replaces a draw from
    ``rng`` when given.
    """
    schedule.check_t(t)
    x_t = np.asarray(x_t, dtype=float)
    beta, ab = schedule.beta(t), schedule.alpha_bar(t)
    eps = model.predict(x_t, t, cond)
    mean = (x_t - beta / np.sqrt(1.0 - ab) * eps) / np.sqrt(1.0 - beta)
    if t == 1:
        return mean
    if noise is None:
        noise = rng.standard_normal(x_t.shape)
    return mean + np.sqrt(beta) * noise


def _batched(model, cond):
    cond = np.asarray(cond, dtype=float)
    single = cond.ndim == 1
    cond = np.atleast_2d(cond)
    h, w = model.image_shape
    return cond, single, (cond.shape[0], h * w)


def _finish(model, x, single):
    x = x.reshape(x.shape[0], *model.image_shape)
    return x[0] if single else x


def sample(model, cond, seed, schedule: NoiseSchedule) -> np.ndarray:
    """Full reverse chain from ``t = T`` to 1 with a single model.

    ``cond`` is one conditioning vector or a (B, C) batch; the result is an
    image or a (B, H, W) stack in model space.
    """
    cond, single, shape = _batched(model, cond)
    streams = NoiseStreams(seed)
    x = streams.initial(shape)
    for t in range(schedule.T, 0, -1):
        x = reverse_step(model, x, t, cond, None, schedule, noise=streams.step(t, shape) if t > 1 else None)
    return _finish(model, x, single)


def split_sample(cluster_model, local_model, cond, plan: SplitPlan, seed, schedule: NoiseSchedule,
                 channel: ChannelConfig | None = None, return_handoff: bool = False):
    """General denoising on the edge, then personalized denoising at the receiver.

    The cluster model runs ``t = T .. T - k + 1`` for ``k = plan.s_offload``.
    If ``channel`` is given the handoff state crosses the AWGN link (per-image
    power, channel stream of ``seed``), and each image resumes at its remapped
    timestep after rescaling. With ``return_handoff`` the per-image resume
    timesteps are returned as well.
    """
    plan.validate(schedule.T)
    cond, single, shape = _batched(local_model, cond)
    streams = NoiseStreams(seed)
    k = plan.s_offload
    x = streams.initial(shape)
    for t in range(schedule.T, schedule.T - k, -1):
        x = reverse_step(cluster_model, x, t, cond, None, schedule, noise=streams.step(t, shape) if t > 1 else None)

    s = schedule.T - k
    resume = np.full(shape[0], s, dtype=int)
    if k > 0 and channel is not None and not channel.noiseless:
        rng = streams.channel()
        for i in range(shape[0]):
            frame = AnalogFrame(x[i])
            received = awgn_transmit(frame, channel, rng)
            remap = effective_timestep(s, channel.snr_db, schedule, signal_power=frame.measured_power)
            x[i] = remap.scale_c * received.symbols
            resume[i] = remap.t_prime

    for t in range(int(resume.max(initial=0)), 0, -1):
        noise = streams.step(t, shape) if t > 1 else None
        active = resume >= t
        if active.all():
            x = reverse_step(local_model, x, t, cond, None, schedule, noise=noise)
        else:
            idx = np.nonzero(active)[0]
            x[idx] = reverse_step(local_model, x[idx], t, cond[idx], None, schedule,
                                  noise=None if noise is None else noise[idx])
    out = _finish(local_model, x, single)
    return (out, resume) if return_handoff else out

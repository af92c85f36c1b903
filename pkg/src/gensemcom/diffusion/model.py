"""Small dense epsilon-prediction network, written against numpy only.

Input features per sample are the flattened noisy image, a sinusoidal
timestep embedding, the box conditioning vector, and a fixed rasterization of
the conditioning boxes onto the pixel grid. Two SiLU hidden layers feed a
linear noise head plus a learned scalar gate on the noisy input::

    eps_hat = W3 h2 + b3 + softplus(wg . h2 + bg) * x_t

The gate carries the identity-like path that dominates at large t. It is kept
non-negative because a negative coefficient on x_t makes the ancestral update
expansive, and samples that wander off the training distribution then run
away instead of being pulled back.
"""

from __future__ import annotations

import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from ..codec import BoundingBox
from ..errors import TrainingDivergenceError, ValidationError
from .schedule import NoiseSchedule, forward_diffuse

SLOT_WIDTH = 5  # x_min, y_min, x_max, y_max, presence


@dataclass(frozen=True)
class DenoiserArch:
    height: int = 16
    width: int = 16
    time_dim: int = 16
    k_max: int = 4
    hidden: int = 256
    hidden2: int = 256
    T: int = 1000

    @property
    def dim(self) -> int:
        return self.height * self.width

    @property
    def cond_dim(self) -> int:
        return SLOT_WIDTH * self.k_max

    @property
    def in_dim(self) -> int:
        return 2 * self.dim + self.time_dim + self.cond_dim

    def shapes(self) -> list[tuple[int, ...]]:
        return [
            (self.in_dim, self.hidden), (self.hidden,),
            (self.hidden, self.hidden2), (self.hidden2,),
            (self.hidden2, self.dim), (self.dim,),
            (self.hidden2,), (1,),
        ]

    @property
    def num_params(self) -> int:
        return sum(int(np.prod(s)) for s in self.shapes())


def make_conditioning(boxes: Sequence[BoundingBox], k_max: int = 4) -> np.ndarray:
    """Fixed-slot conditioning vector; unused slots are all zero."""
    if len(boxes) > k_max:
        raise ValidationError(f"{len(boxes)} boxes exceed the {k_max} conditioning slots")
    vec = np.zeros(SLOT_WIDTH * k_max)
    for i, b in enumerate(boxes):
        vec[SLOT_WIDTH * i:SLOT_WIDTH * (i + 1)] = (*b.as_tuple(), 1.0)
    return vec


def rasterize_conditioning(cond: np.ndarray, height: int, width: int) -> np.ndarray:
    """Pixels whose centers fall inside any present box, shape (B, height*width)."""
    cond = np.atleast_2d(cond)
    slots = cond.reshape(cond.shape[0], -1, SLOT_WIDTH)
    cx = (np.arange(width) + 0.5) / width
    cy = (np.arange(height) + 0.5) / height
    inx = (cx[None, None, :] >= slots[..., 0:1]) & (cx[None, None, :] < slots[..., 2:3])
    iny = (cy[None, None, :] >= slots[..., 1:2]) & (cy[None, None, :] < slots[..., 3:4])
    inside = iny[..., :, None] & inx[..., None, :] & (slots[..., 4:5, None] > 0.5)
    return inside.any(axis=1).reshape(cond.shape[0], -1).astype(float)


def time_embedding(t, T: int, dim: int) -> np.ndarray:
    t = np.atleast_1d(np.asarray(t, dtype=float))
    freqs = np.exp(np.linspace(0.0, np.log(200.0), dim // 2))
    ang = (t / T)[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


def _softplus(z):
    return np.logaddexp(0.0, z)


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-np.clip(z, -60.0, 60.0)))


def _silu(z):
    s = _sigmoid(z)
    return z * s, s


class Denoiser:
    """Noise predictor holding one flat float64 parameter vector."""

    def __init__(self, arch: DenoiserArch = DenoiserArch(), params: np.ndarray | None = None,
                 seed: int | None = 0):
        self.arch = arch
        if params is None:
            params = self._init_params(np.random.default_rng(seed))
        params = np.asarray(params, dtype=np.float64)
        if params.shape != (arch.num_params,):
            raise ValidationError(f"expected {arch.num_params} parameters, got {params.shape}")
        if not np.all(np.isfinite(params)):
            raise ValidationError("parameters must be finite")
        self.params = params.copy()

    @property
    def image_shape(self) -> tuple[int, int]:
        return (self.arch.height, self.arch.width)

    def copy(self) -> "Denoiser":
        return Denoiser(self.arch, self.params)

    def _init_params(self, rng) -> np.ndarray:
        a = self.arch
        parts = [
            rng.normal(0.0, np.sqrt(1.0 / a.in_dim), (a.in_dim, a.hidden)), np.zeros(a.hidden),
            rng.normal(0.0, np.sqrt(1.0 / a.hidden), (a.hidden, a.hidden2)), np.zeros(a.hidden2),
            0.1 * rng.normal(0.0, np.sqrt(1.0 / a.hidden2), (a.hidden2, a.dim)), np.zeros(a.dim),
            np.zeros(a.hidden2), np.zeros(1),
        ]
        return np.concatenate([p.ravel() for p in parts])

    def _views(self, flat):
        out, pos = [], 0
        for shape in self.arch.shapes():
            n = int(np.prod(shape))
            out.append(flat[pos:pos + n].reshape(shape))
            pos += n
        return out

    def features(self, x_t, t, cond) -> np.ndarray:
        a = self.arch
        x_t = np.asarray(x_t, dtype=float).reshape(-1, a.dim)
        cond = np.atleast_2d(np.asarray(cond, dtype=float))
        if cond.shape != (x_t.shape[0], a.cond_dim):
            raise ValidationError(f"conditioning shape {cond.shape} does not match batch {x_t.shape[0]}")
        t = np.broadcast_to(np.asarray(t), (x_t.shape[0],))
        return np.concatenate(
            [x_t, time_embedding(t, a.T, a.time_dim), cond, rasterize_conditioning(cond, a.height, a.width)],
            axis=1,
        )

    def _forward(self, inp):
        W1, b1, W2, b2, W3, b3, wg, bg = self._views(self.params)
        z1 = inp @ W1 + b1
        h1, s1 = _silu(z1)
        z2 = h1 @ W2 + b2
        h2, s2 = _silu(z2)
        zg = h2 @ wg + bg
        gate = _softplus(zg)
        out = h2 @ W3 + b3 + gate[:, None] * inp[:, :self.arch.dim]
        return out, (z1, h1, s1, z2, h2, s2, zg)

    def predict(self, x_t, t, cond) -> np.ndarray:
        """Predicted noise, same shape as ``x_t``."""
        x_t = np.asarray(x_t, dtype=float)
        out, _ = self._forward(self.features(x_t, t, cond))
        return out.reshape(x_t.shape)

    def loss_and_grad(self, x_t, t, cond, eps) -> tuple[float, np.ndarray]:
        """Mean squared error against ``eps`` and its gradient w.r.t. the flat parameters."""
        inp = self.features(x_t, t, cond)
        eps = np.asarray(eps, dtype=float).reshape(inp.shape[0], -1)
        out, (z1, h1, s1, z2, h2, s2, zg) = self._forward(inp)
        _, _, W2, _, W3, _, wg, _ = self._views(self.params)
        diff = out - eps
        loss = float(np.mean(diff * diff))
        g_out = 2.0 * diff / diff.size
        x_part = inp[:, :self.arch.dim]
        g_gate = np.sum(g_out * x_part, axis=1) * _sigmoid(zg)

        grad = np.empty_like(self.params)
        gW1, gb1, gW2, gb2, gW3, gb3, gwg, gbg = self._views(grad)
        gW3[...] = h2.T @ g_out
        gb3[...] = g_out.sum(axis=0)
        gwg[...] = h2.T @ g_gate
        gbg[...] = g_gate.sum()
        g_h2 = g_out @ W3.T + g_gate[:, None] * wg[None, :]
        g_z2 = g_h2 * (s2 * (1.0 + z2 * (1.0 - s2)))
        gW2[...] = h1.T @ g_z2
        gb2[...] = g_z2.sum(axis=0)
        g_z1 = (g_z2 @ W2.T) * (s1 * (1.0 + z1 * (1.0 - s1)))
        gW1[...] = inp.T @ g_z1
        gb1[...] = g_z1.sum(axis=0)
        return loss, grad


class GradientDescent:
    def __init__(self, lr: float = 1e-3):
        self.lr = lr

    def update(self, params: np.ndarray, grad: np.ndarray) -> None:
        params -= self.lr * grad


class Adam:
    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = self.v = None
        self.step = 0

    def update(self, params: np.ndarray, grad: np.ndarray) -> None:
        if self.m is None:
            self.m = np.zeros_like(params)
            self.v = np.zeros_like(params)
        self.step += 1
        self.m *= self.beta1
        self.m += (1.0 - self.beta1) * grad
        self.v *= self.beta2
        self.v += (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1 ** self.step)
        v_hat = self.v / (1.0 - self.beta2 ** self.step)
        params -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def make_optimizer(name: str = "adam", lr: float = 1e-3):
    if name == "adam":
        return Adam(lr)
    if name in ("gd", "sgd"):
        return GradientDescent(lr)
    raise ValidationError(f"unknown optimizer {name!r}")


def sample_timesteps(rng, n: int, schedule: NoiseSchedule, t_range: tuple[int, int] | None = None):
    lo, hi = t_range if t_range is not None else (1, schedule.T)
    schedule.check_t([lo, hi])
    return rng.integers(lo, hi + 1, size=n)


def train_step(model: Denoiser, batch, schedule: NoiseSchedule, rng, optimizer=None,
               t_range: tuple[int, int] | None = None) -> tuple[Denoiser, float]:
    """One epsilon-prediction update on ``batch = (x0, cond)``.

    ``x0`` is in model space (pixels mapped to [-1, 1]). Timesteps are drawn
    uniformly from ``t_range`` (inclusive, default the full schedule).
    The model is updated in place and returned.
    """
    x0, cond = batch
    x0 = np.asarray(x0, dtype=float).reshape(len(x0), -1)
    if x0.shape[0] == 0:
        raise ValidationError("empty training batch")
    if optimizer is None:
        optimizer = GradientDescent()
    t = sample_timesteps(rng, x0.shape[0], schedule, t_range)
    eps = rng.standard_normal(x0.shape)
    x_t = forward_diffuse(x0, t, eps, schedule)
    loss, grad = model.loss_and_grad(x_t, t, cond, eps)
    if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
        raise TrainingDivergenceError(f"non-finite training loss {loss}")
    optimizer.update(model.params, grad)
    return model, loss


def evaluate_loss(model, x0, cond, schedule: NoiseSchedule, seed: int = 0,
                  t_range: tuple[int, int] | None = None, repeats: int = 4) -> float:
    """Epsilon-MSE on fixed (seeded) timesteps and noise, for comparable curves."""
    rng = np.random.default_rng(seed)
    x0 = np.asarray(x0, dtype=float).reshape(len(x0), -1)
    cond = np.asarray(cond, dtype=float)
    x0 = np.concatenate([x0] * repeats)
    cond = np.concatenate([cond] * repeats)
    t = sample_timesteps(rng, x0.shape[0], schedule, t_range)
    eps = rng.standard_normal(x0.shape)
    pred = model.predict(forward_diffuse(x0, t, eps, schedule), t, cond)
    return float(np.mean((pred - eps) ** 2))


# Checkpoint layout (little-endian): 8-byte magic, u32 version, then u32
# height, width, time_dim, k_max, hidden, hidden2, T, then u64 parameter
# count, then the float64 parameter vector.
_MAGIC = b"GSCDNSR\x00"
_HEADER = struct.Struct("<8sI7IQ")
_ARCH_FIELDS = ("height", "width", "time_dim", "k_max", "hidden", "hidden2", "T")


def save_checkpoint(model: Denoiser, path) -> None:
    a = asdict(model.arch)
    header = _HEADER.pack(_MAGIC, 1, *(a[f] for f in _ARCH_FIELDS), model.arch.num_params)
    Path(path).write_bytes(header + model.params.astype("<f8").tobytes())


def load_checkpoint(path) -> Denoiser:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValidationError(f"{path}: truncated checkpoint header")
    magic, version, *fields, n = _HEADER.unpack_from(raw)
    if magic != _MAGIC or version != 1:
        raise ValidationError(f"{path}: not a denoiser checkpoint")
    arch = DenoiserArch(**dict(zip(_ARCH_FIELDS, fields)))
    params = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    if params.size != n or n != arch.num_params:
        raise ValidationError(f"{path}: parameter count mismatch")
    return Denoiser(arch, params.astype(np.float64))

"""Adaptive split-point offloading of the semantic encoder.

Layers ``1..split`` run on the end device, the rest on the edge server. A
tabular Q-learning agent moves the split point by -1/0/+1 per decision in
response to SNR, compute capacity, and source-data drift.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import ValidationError

log = logging.getLogger(__name__)

ACTIONS = (-1, 0, 1)
VARIANCE_FLOOR = 1e-12


@dataclass(frozen=True)
class Layer:
    flops: float
    output_size: float


@dataclass(frozen=True)
class EncoderProfile:
    layers: tuple[Layer, ...]
    input_size: float

    def __post_init__(self):
        if not self.layers:
            raise ValidationError("an encoder profile needs at least one layer")
        if self.input_size <= 0 or any(l.flops <= 0 or l.output_size <= 0 for l in self.layers):
            raise ValidationError("layer costs and sizes must be positive")

    @property
    def L(self) -> int:
        return len(self.layers)

    def transmitted_size(self, split: int) -> float:
        return self.input_size if split == 0 else self.layers[split - 1].output_size


@dataclass(frozen=True)
class OffloadState:
    split_point: int
    snr_db: float
    end_capacity: float
    edge_capacity: float
    data_complexity: int = 0

    def key(self, env: "EnvConfig") -> tuple:
        """Discretized Q-table key."""
        return (self.split_point, env.snr_bucket(self.snr_db), env.end_bucket(self.end_capacity),
                env.edge_bucket(self.edge_capacity), self.data_complexity)


def encode_latency(profile: EncoderProfile, split_point: int, state: OffloadState, link_rate: float,
                   data_scale: float = 1.0) -> dict[str, float]:
    """Latency breakdown for a given split (compute units / capacity, size / rate)."""
    if not 0 <= split_point <= profile.L:
        raise ValidationError(f"split {split_point} outside [0, {profile.L}]")
    flops = [l.flops * data_scale for l in profile.layers]
    local = sum(flops[:split_point]) / state.end_capacity
    edge = sum(flops[split_point:]) / state.edge_capacity
    tx = profile.transmitted_size(split_point) * data_scale / link_rate
    return {"local_ms": local, "tx_ms": tx, "edge_ms": edge, "total_ms": local + tx + edge}


def gaussian_kl(mu_r: float, var_r: float, mu_s: float, var_s: float) -> float:
    """KL(N(mu_r, var_r) || N(mu_s, var_s))."""
    return 0.5 * math.log(var_s / var_r) + (var_r + (mu_r - mu_s) ** 2) / (2.0 * var_s) - 0.5


def feature_distortion(sent, received) -> float:
    """KL(received || sent) between univariate Gaussians fitted to each vector."""
    sent = np.asarray(sent, dtype=float).ravel()
    received = np.asarray(received, dtype=float).ravel()
    if sent.size != received.size or sent.size < 2:
        raise ValidationError("feature vectors must have equal length >= 2")
    var_s, var_r = sent.var(), received.var()
    if var_s < VARIANCE_FLOOR or var_r < VARIANCE_FLOOR:
        log.warning("zero feature variance; flooring at %g", VARIANCE_FLOOR)
        var_s, var_r = max(var_s, VARIANCE_FLOOR), max(var_r, VARIANCE_FLOOR)
    return max(0.0, gaussian_kl(received.mean(), var_r, sent.mean(), var_s))


def feasibility_gate(distortion: float, threshold: float) -> bool:
    """True when the offloading round is feasible; False means retransmit / fall back to local."""
    if distortion < 0:
        raise ValidationError("distortion must be non-negative")
    return distortion <= threshold


@dataclass(frozen=True)
class EnvConfig:
    """Environment: profile, discrete condition levels, and drift persistence.

    Each of SNR, end capacity, edge capacity, and data complexity moves to a
    uniformly drawn level with probability ``1 - persistence`` per decision;
    ``persistence = 1`` freezes the environment.
    """

    profile: EncoderProfile
    snr_levels: tuple[float, ...] = (0.0, 10.0, 20.0)
    end_levels: tuple[float, ...] = (0.5, 1.0, 2.0)
    edge_levels: tuple[float, ...] = (2.0, 5.0, 10.0)
    data_scales: tuple[float, ...] = (1.0,)
    bandwidth: float = 1.0           # size units per ms per bit/s/Hz
    latency_scale: float = 10.0
    kappa: float = 1.0
    kl_threshold: float = 0.05
    persistence: float = 1.0
    probe_dim: int = 256
    probe_seed: int = 0

    @staticmethod
    def _nearest(levels, v) -> int:
        return min(range(len(levels)), key=lambda i: abs(v - levels[i]))

    def snr_bucket(self, snr_db: float) -> int:
        return self._nearest(self.snr_levels, snr_db)

    def end_bucket(self, c: float) -> int:
        return self._nearest(self.end_levels, c)

    def edge_bucket(self, c: float) -> int:
        return self._nearest(self.edge_levels, c)

    def link_rate(self, snr_db: float) -> float:
        return self.bandwidth * math.log2(1.0 + 10.0 ** (snr_db / 10.0))


class EncoderEnv:
    """Split-point MDP with deterministic channel distortion per SNR level."""

    def __init__(self, config: EnvConfig):
        self.config = config
        probe = np.random.default_rng(config.probe_seed)
        self._features = probe.standard_normal(config.probe_dim)
        self._unit_noise = probe.standard_normal(config.probe_dim)
        self._kl_cache: dict[float, float] = {}
        self._reward_cache: dict[OffloadState, float] = {}
        self._key_cache: dict[OffloadState, tuple] = {}

    def key(self, state: OffloadState) -> tuple:
        k = self._key_cache.get(state)
        if k is None:
            k = self._key_cache[state] = state.key(self.config)
        return k

    def distortion(self, state: OffloadState) -> float:
        if state.split_point == self.config.profile.L:
            return 0.0  # final semantic payload goes over the lossless digital link
        kl = self._kl_cache.get(state.snr_db)
        if kl is None:
            power = float(np.mean(self._features ** 2))
            var = power / 10.0 ** (state.snr_db / 10.0)
            kl = feature_distortion(self._features, self._features + math.sqrt(var) * self._unit_noise)
            self._kl_cache[state.snr_db] = kl
        return kl

    def latency(self, state: OffloadState) -> dict[str, float]:
        cfg = self.config
        return encode_latency(cfg.profile, state.split_point, state, cfg.link_rate(state.snr_db),
                              cfg.data_scales[state.data_complexity])

    def reward(self, state: OffloadState) -> float:
        r = self._reward_cache.get(state)
        if r is None:
            cfg = self.config
            feasible = feasibility_gate(self.distortion(state), cfg.kl_threshold)
            r = -self.latency(state)["total_ms"] / cfg.latency_scale - (0.0 if feasible else cfg.kappa)
            self._reward_cache[state] = r
        return r

    def effective_latency(self, state: OffloadState) -> float:
        """Latency actually incurred: a failed gate falls back to fully local encoding."""
        if feasibility_gate(self.distortion(state), self.config.kl_threshold):
            return self.latency(state)["total_ms"]
        return self.latency(replace(state, split_point=self.config.profile.L))["total_ms"]

    def random_state(self, rng) -> OffloadState:
        cfg = self.config
        return OffloadState(
            int(rng.integers(0, cfg.profile.L + 1)),
            cfg.snr_levels[rng.integers(len(cfg.snr_levels))],
            cfg.end_levels[rng.integers(len(cfg.end_levels))],
            cfg.edge_levels[rng.integers(len(cfg.edge_levels))],
            int(rng.integers(len(cfg.data_scales))),
        )

    def drift(self, state: OffloadState, rng) -> OffloadState:
        cfg = self.config
        if cfg.persistence >= 1.0:
            return state
        s = state
        if rng.random() > cfg.persistence:
            s = replace(s, snr_db=cfg.snr_levels[rng.integers(len(cfg.snr_levels))])
        if rng.random() > cfg.persistence:
            s = replace(s, end_capacity=cfg.end_levels[rng.integers(len(cfg.end_levels))])
        if rng.random() > cfg.persistence:
            s = replace(s, edge_capacity=cfg.edge_levels[rng.integers(len(cfg.edge_levels))])
        if rng.random() > cfg.persistence:
            s = replace(s, data_complexity=int(rng.integers(len(cfg.data_scales))))
        return s

    def step(self, state: OffloadState, action: int, rng) -> tuple[OffloadState, float]:
        if action not in ACTIONS:
            raise ValidationError(f"action must be one of {ACTIONS}")
        split = min(max(state.split_point + action, 0), self.config.profile.L)
        nxt = self.drift(replace(state, split_point=split), rng)
        return nxt, self.reward(nxt)


def step_env(env: EncoderEnv, state: OffloadState, action: int, rng) -> tuple[OffloadState, float]:
    return env.step(state, action, rng)


@dataclass
class QTable:
    values: dict[tuple, float] = field(default_factory=dict)

    def get(self, key: tuple, action: int) -> float:
        return self.values.get((key, action), 0.0)

    def best_action(self, key: tuple) -> int:
        # ties resolve toward "stay" first, then by action order
        order = (0, -1, 1)
        return max(order, key=lambda a: (self.get(key, a), -order.index(a)))

    def best_value(self, key: tuple) -> float:
        return max(self.get(key, a) for a in ACTIONS)

    def __len__(self) -> int:
        return len(self.values)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["split", "snr_bucket", "end_bucket", "edge_bucket", "data_bucket", "action", "value"])
            for (key, action), v in sorted(self.values.items()):
                w.writerow([*key, action, repr(v)])

    @classmethod
    def from_csv(cls, path) -> "QTable":
        table = cls()
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                key = tuple(int(row[k]) for k in ("split", "snr_bucket", "end_bucket", "edge_bucket", "data_bucket"))
                table.values[(key, int(row["action"]))] = float(row["value"])
        return table


@dataclass(frozen=True)
class QLearningConfig:
    episode_length: int = 30
    epsilon: float = 0.2
    alpha: float = 0.5
    gamma: float = 0.8


DRIFT_PERSISTENCE = 0.97
DRIFT_DATA_SCALES = (0.5, 1.0, 2.0)
DRIFT_EPISODES = 2000


def frozen_training(L: int) -> tuple[QLearningConfig, int]:
    """Settings for a static environment: deterministic transitions allow
    alpha = 1, and a near-undiscounted return makes the greedy policy walk
    across low-reward splits to the best one. Returns (config, episodes)."""
    return QLearningConfig(episode_length=3 * L + 3, epsilon=0.2, alpha=1.0, gamma=0.99), 600 * (L + 1)


def frozen_start_states(env: "EncoderEnv", conditions: "OffloadState") -> list[OffloadState]:
    """One start state per split point under fixed ``conditions``."""
    return [replace(conditions, split_point=k) for k in range(env.config.profile.L + 1)]


def train_policy(env, episodes: int, rng, q: QLearningConfig = QLearningConfig(),
                 start_states: Sequence[OffloadState] | None = None) -> QTable:
    """Epsilon-greedy tabular Q-learning; each episode starts from a random state.

    ``env`` may be an :class:`EncoderEnv` or the :class:`EnvConfig` to build one from.
    """
    if isinstance(env, EnvConfig):
        env = EncoderEnv(env)
    if episodes < 0:
        raise ValidationError("episodes must be >= 0")
    table = QTable()
    for ep in range(episodes):
        state = start_states[ep % len(start_states)] if start_states else env.random_state(rng)
        for _ in range(q.episode_length):
            key = env.key(state)
            if rng.random() < q.epsilon:
                action = ACTIONS[rng.integers(len(ACTIONS))]
            else:
                action = table.best_action(key)
            nxt, reward = env.step(state, action, rng)
            target = reward + q.gamma * table.best_value(env.key(nxt))
            old = table.get(key, action)
            table.values[(key, action)] = old + q.alpha * (target - old)
            state = nxt
    return table


def greedy_rollout(env: EncoderEnv, table: QTable, state: OffloadState, steps: int, rng=None):
    """Follow the greedy policy; returns visited states (drift needs ``rng``)."""
    states = [state]
    for _ in range(steps):
        state, _ = env.step(state, table.best_action(env.key(state)),
                            rng if rng is not None else np.random.default_rng(0))
        states.append(state)
    return states


def exhaustive_best_split(env: EncoderEnv, state: OffloadState) -> int:
    """Split maximizing the one-step reward under the state's conditions."""
    rewards = [env.reward(replace(state, split_point=k)) for k in range(env.config.profile.L + 1)]
    return int(np.argmax(rewards))


def random_profile(rng, L: int | None = None) -> EncoderProfile:
    """CNN-like encoder: large raw input, feature maps that shrink with depth."""
    if L is None:
        L = int(rng.integers(3, 9))
    input_size = float(rng.uniform(80.0, 120.0))
    size = input_size
    layers = []
    for _ in range(L):
        size = size * float(rng.uniform(0.4, 1.1))
        layers.append(Layer(float(rng.uniform(1.0, 6.0)), max(size, 0.5)))
    return EncoderProfile(tuple(layers), input_size)


def evaluate_policy(env: EncoderEnv, policy, start: OffloadState, steps: int, seed: int) -> float:
    """Mean effective latency of ``policy(state) -> action`` along one drift trajectory."""
    rng = np.random.default_rng(seed)
    state, total = start, 0.0
    for _ in range(steps):
        state, _ = env.step(state, policy(state), rng)
        total += env.effective_latency(state)
    return total / steps


def static_policy(env: EncoderEnv, split: int):
    """Policy that walks to ``split`` and stays there."""
    return lambda s: int(np.sign(split - s.split_point))

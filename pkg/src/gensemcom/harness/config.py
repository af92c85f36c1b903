"""Scenario configuration: one JSON document, every key optional.

Missing keys take the defaults below; unknown keys are rejected so typos
surface early.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields, is_dataclass, replace
from pathlib import Path
from typing import Any

from ..errors import ConfigurationError, ValidationError


@dataclass(frozen=True)
class ModelConfig:
    hidden: int = 128
    time_dim: int = 16
    k_max: int = 4
    T: int = 1000
    beta_min: float = 1e-4
    beta_max: float = 0.02


@dataclass(frozen=True)
class TrainConfig:
    local_steps: int = 3000
    cluster_steps: int = 3000
    batch_size: int = 32
    optimizer: str = "adam"
    lr: float = 1e-3
    local_dataset: int = 1000
    cluster_dataset_per_user: int = 300
    seed: int = 0
    log_every: int = 100


@dataclass(frozen=True)
class SceneConfig:
    image_size: tuple[int, int] = (16, 16)
    box_count_range: tuple[int, int] = (1, 3)
    box_px_range: tuple[int, int] = (3, 6)
    shading: float = 0.1
    detect_margin: float = 0.25


@dataclass(frozen=True)
class CaseStudyConfig:
    scenes_per_cell: int = 8
    local_per_step_ms: float = 1.0
    edge_per_step_ms: float = 0.2


@dataclass(frozen=True)
class FLConfig:
    rounds: int = 30
    steps_per_round: int = 10
    hidden: int = 64
    dataset_per_client: int = 30  # small local sets, where pooling across users pays off
    eval_per_client: int = 64
    weighting: str = "uniform"
    clip_norm: float | None = None
    batch_size: int = 32
    lr: float = 1e-3


@dataclass(frozen=True)
class SchedulerConfig:
    lam: float = 3e-4
    base_ms: float = 10.0
    per_item_ms: float = 2.0
    instances: int = 100
    num_users: int = 3
    search_cap: int = 100_000
    quality_csv: str | None = None  # case-study output to build a measured instance from
    quality_snr_db: float = 10.0


@dataclass(frozen=True)
class EncodeOffloadConfig:
    drift_draws: int = 20
    frozen_L: tuple[int, ...] = (1, 2, 3, 4, 5, 6, 7, 8)
    episodes: int = 2000
    episode_length: int = 30
    epsilon: float = 0.2
    alpha: float = 0.5
    gamma: float = 0.8
    persistence: float = 0.97
    data_scales: tuple[float, ...] = (0.5, 1.0, 2.0)
    kl_threshold: float = 0.05
    kappa: float = 1.0
    latency_scale: float = 10.0
    eval_steps: int = 2000


@dataclass(frozen=True)
class Tolerances:
    closed_loop_iou: float = 0.8
    offload0_iou_floor: float = 0.5
    trend_fraction: float = 0.7
    scheduler_gap: float = 0.05
    scheduler_fraction: float = 0.95


@dataclass(frozen=True)
class ScenarioConfig:
    num_users: int = 3
    background_ids: tuple[int, ...] = (0, 1, 2)
    snr_db: tuple[float, ...] = (0.0, 10.0, 20.0)
    offload_options: tuple[int, ...] = (0, 350, 650)
    max_offload: int = 650
    seeds: tuple[int, ...] = tuple(range(10))
    model_dir: str | None = None     # default: <out>/models
    train_if_missing: bool = True
    model: ModelConfig = ModelConfig()
    train: TrainConfig = TrainConfig()
    scene: SceneConfig = SceneConfig()
    case_study: CaseStudyConfig = CaseStudyConfig()
    fl: FLConfig = FLConfig()
    scheduler: SchedulerConfig = SchedulerConfig()
    encode_offload: EncodeOffloadConfig = EncodeOffloadConfig()
    tolerances: Tolerances = Tolerances()

    def __post_init__(self):
        if not self.seeds:
            raise ConfigurationError("seeds must be nonempty")
        if len(self.background_ids) != self.num_users:
            raise ConfigurationError("background_ids needs one entry per user")
        if 0 not in self.offload_options:
            raise ConfigurationError("offload_options must include 0")
        if any(not 0 <= k <= self.max_offload for k in self.offload_options):
            raise ConfigurationError(f"offload options must lie in [0, {self.max_offload}]")

    def with_seed(self, seed: int) -> "ScenarioConfig":
        return replace(self, seeds=(int(seed),), train=replace(self.train, seed=int(seed)))

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _build(cls, data: dict[str, Any], where: str):
    if not isinstance(data, dict):
        raise ConfigurationError(f"{where or 'config'} must be a JSON object")
    known = {f.name: f for f in fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ConfigurationError(f"unknown config keys at {where or 'top level'}: {sorted(unknown)}")
    kwargs = {}
    defaults = cls()
    for name, value in data.items():
        current = getattr(defaults, name)
        if is_dataclass(current):
            kwargs[name] = _build(type(current), value, f"{where}.{name}".lstrip("."))
        elif isinstance(current, tuple) and isinstance(value, list):
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValidationError) as exc:
        raise ConfigurationError(f"invalid config at {where or 'top level'}: {exc}") from exc


def config_from_dict(data: dict[str, Any]) -> ScenarioConfig:
    return _build(ScenarioConfig, data, "")


def load_config(path: str | Path | None) -> ScenarioConfig:
    if path is None:
        return ScenarioConfig()
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    return config_from_dict(data)

"""Scenario config, synthetic scenes, experiments, and the CLI."""

from .config import ScenarioConfig, config_from_dict, load_config
from .experiments import (METRICS_COLUMNS, ensure_models, run_case_study, run_encode_offload, run_fl_experiment,
                          run_scheduler_experiment, train_models)
from .scenes import (SyntheticScene, background_texture, detect_boxes, generate_scene, make_dataset,
                     received_boxes, vehicle_intensity)

__all__ = [
    "ScenarioConfig", "config_from_dict", "load_config", "METRICS_COLUMNS", "ensure_models", "run_case_study",
    "run_encode_offload", "run_fl_experiment", "run_scheduler_experiment", "train_models", "SyntheticScene",
    "background_texture", "detect_boxes", "generate_scene", "make_dataset", "received_boxes", "vehicle_intensity",
]

"""Classic DDPM decoder: schedule, noise predictor, and (split) sampling."""

import numpy as np

from .model import (Adam, Denoiser, DenoiserArch, GradientDescent, evaluate_loss, load_checkpoint,
                    make_conditioning, make_optimizer, rasterize_conditioning, save_checkpoint, train_step)
from .sampling import MAX_OFFLOAD_STEPS, NoiseStreams, SplitPlan, reverse_step, sample, split_sample
from .schedule import NoiseSchedule, forward_diffuse, make_schedule


def to_model_space(img):
    """Map [0, 1] pixels to the [-1, 1] range the denoiser works in."""
    return 2.0 * np.asarray(img, dtype=float) - 1.0


def to_image_space(x):
    return (np.asarray(x, dtype=float) + 1.0) / 2.0


__all__ = [
    "Adam", "Denoiser", "DenoiserArch", "GradientDescent", "MAX_OFFLOAD_STEPS", "NoiseSchedule",
    "NoiseStreams", "SplitPlan", "evaluate_loss", "forward_diffuse", "load_checkpoint",
    "make_conditioning", "make_optimizer", "make_schedule", "rasterize_conditioning", "reverse_step",
    "sample", "save_checkpoint", "split_sample", "to_image_space", "to_model_space", "train_step",
]

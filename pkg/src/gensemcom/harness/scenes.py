"""Synthetic traffic-like scenes and a threshold box detector.

Each background id maps to a fixed grayscale texture; vehicles are bright
axis-aligned rectangles on pixel boundaries, separated by at least one pixel
so that 4-connected detection recovers them one by one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..codec import BoundingBox, SceneSemantics, dequantize_box, mask_to_boxes, quantize_box
from ..diffusion.model import make_conditioning
from ..errors import ValidationError

MAX_PLACEMENT_TRIES = 200


@dataclass
class SyntheticScene:
    image: np.ndarray
    semantics: SceneSemantics
    background_id: int


def background_texture(background_id: int, image_size=(16, 16)) -> np.ndarray:
    h, w = image_size
    yy, xx = np.meshgrid(np.linspace(0.0, 1.0, h), np.linspace(0.0, 1.0, w), indexing="ij")
    kind = background_id % 3
    if kind == 0:
        tex = 0.10 + 0.25 * xx
    elif kind == 1:
        tex = 0.85 - 0.25 * yy
    else:
        lanes = ((np.arange(w) // max(1, w // 4)) % 2).astype(float)
        tex = 0.20 + 0.15 * np.broadcast_to(lanes, (h, w))
    if background_id >= 3:
        rng = np.random.default_rng(background_id)
        tex = tex + 0.05 * rng.uniform(-1.0, 1.0, size=(h, w))
    return np.clip(tex, 0.0, 1.0)


def vehicle_intensity(background_id: int) -> tuple[float, float]:
    """Intensity range of vehicles: dark on the bright (daytime) texture, bright otherwise."""
    return (0.0, 0.15) if background_id % 3 == 1 else (0.8, 0.95)


def generate_scene(rng, background_id: int, image_size=(16, 16), box_count_range=(1, 3),
                   box_px_range=(3, 6), box_intensity=None, shading: float = 0.0,
                   scene_id=None) -> SyntheticScene:
    """Draw ``M`` non-touching rectangles on the background texture.

    ``M`` is uniform on ``box_count_range`` (inclusive), rectangle sides on
    ``box_px_range`` pixels, and each rectangle's intensity on
    ``box_intensity``. ``shading`` adds a random planar tilt of at most that
    amplitude to the background, which the semantics do not describe.
    """
    h, w = image_size
    lo, hi = box_count_range
    if lo < 0 or hi < lo:
        raise ValidationError(f"bad box count range {box_count_range}")
    pmin, pmax = box_px_range
    if pmin < 1 or pmax > min(h, w) or pmax < pmin:
        raise ValidationError(f"box size range {box_px_range} does not fit a {h}x{w} image")
    m = int(rng.integers(lo, hi + 1))
    img = background_texture(background_id, image_size).copy()
    if shading:
        yy, xx = np.meshgrid(np.linspace(-0.5, 0.5, h), np.linspace(-0.5, 0.5, w), indexing="ij")
        tilt = rng.uniform(-1.0, 1.0, size=2)
        img += shading * (tilt[0] * xx + tilt[1] * yy)
    if box_intensity is None:
        box_intensity = vehicle_intensity(background_id)
    lo_i, hi_i = (box_intensity, box_intensity) if np.isscalar(box_intensity) else box_intensity
    occupied = np.zeros((h, w), dtype=bool)
    boxes = []
    for _ in range(m):
        for _ in range(MAX_PLACEMENT_TRIES):
            bw, bh = (int(v) for v in rng.integers(pmin, pmax + 1, size=2))
            x0 = int(rng.integers(0, w - bw + 1))
            y0 = int(rng.integers(0, h - bh + 1))
            if not occupied[max(0, y0 - 1):y0 + bh + 1, max(0, x0 - 1):x0 + bw + 1].any():
                break
        else:
            raise ValidationError(f"could not place {m} separated boxes in a {h}x{w} image")
        occupied[y0:y0 + bh, x0:x0 + bw] = True
        img[y0:y0 + bh, x0:x0 + bw] = rng.uniform(lo_i, hi_i)
        boxes.append(BoundingBox(x0 / w, y0 / h, (x0 + bw) / w, (y0 + bh) / h))
    return SyntheticScene(img, SceneSemantics(scene_id, boxes), background_id)


def detect_boxes(image, background_id: int, margin: float = 0.25) -> list[BoundingBox]:
    image = np.asarray(image, dtype=float)
    diff = image - background_texture(background_id, image.shape)
    return mask_to_boxes(np.abs(diff) > margin)


def received_boxes(scene: SyntheticScene) -> list[BoundingBox]:
    """Boxes as the receiver sees them after 5-bit quantization."""
    return [dequantize_box(quantize_box(b)) for b in scene.semantics.boxes]


def make_dataset(rng, background_id: int, n: int, k_max: int = 4, **scene_kw):
    """Scenes plus the matching (images, conditioning) training arrays."""
    scenes = [generate_scene(rng, background_id, scene_id=i, **scene_kw) for i in range(n)]
    images = np.stack([s.image for s in scenes]) if scenes else np.zeros((0, *scene_kw.get("image_size", (16, 16))))
    conds = np.stack([make_conditioning(received_boxes(s), k_max) for s in scenes]) if scenes else np.zeros((0, 5 * k_max))
    return scenes, images, conds

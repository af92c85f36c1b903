"""Bounding-box semantic codec.

Boxes are normalized 4-tuples ``(x_min, y_min, x_max, y_max)``. Each
coordinate is quantized to 5 bits (cell width ``RESOLUTION``), so a scene
with ``M`` boxes costs exactly ``20 * M`` bits on the digital link.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Hashable, Sequence

import numpy as np
from scipy import ndimage

from .errors import FramingError, ValidationError

BITS_PER_COORD = 5
RESOLUTION = 1.0 / (1 << BITS_PER_COORD)  # 0.03125
MAX_INDEX = (1 << BITS_PER_COORD) - 1
BITS_PER_BOX = 4 * BITS_PER_COORD


@dataclass(frozen=True)
class BoundingBox:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        vals = self.as_tuple()
        if not all(np.isfinite(v) for v in vals):
            raise ValidationError(f"non-finite box coordinate in {vals}")
        if not (0.0 <= self.x_min < self.x_max <= 1.0 and 0.0 <= self.y_min < self.y_max <= 1.0):
            raise ValidationError(f"invalid box {vals}: need 0 <= min < max <= 1 on both axes")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)

    @property
    def area(self) -> float:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)


@dataclass(frozen=True)
class QuantizedBox:
    indices: tuple[int, int, int, int]

    def __post_init__(self):
        if len(self.indices) != 4:
            raise ValidationError("a quantized box has exactly four indices")
        for k in self.indices:
            if int(k) != k or not 0 <= k <= MAX_INDEX:
                raise ValidationError(f"index {k} does not fit in {BITS_PER_COORD} bits")


@dataclass
class SceneSemantics:
    scene_id: Hashable
    boxes: list[BoundingBox] = field(default_factory=list)

    @property
    def num_boxes(self) -> int:
        return len(self.boxes)

    @property
    def bit_length(self) -> int:
        return BITS_PER_BOX * len(self.boxes)


def quantize_coord(v: float) -> int:
    return min(int(np.floor(v / RESOLUTION)), MAX_INDEX)


def dequantize_coord(index: int) -> float:
    return (index + 0.5) * RESOLUTION


def quantize_box(b: BoundingBox) -> QuantizedBox:
    if not isinstance(b, BoundingBox):
        b = BoundingBox(*b)
    return QuantizedBox(tuple(quantize_coord(v) for v in b.as_tuple()))


def dequantize_box(q: QuantizedBox) -> BoundingBox:
    if not isinstance(q, QuantizedBox):
        q = QuantizedBox(tuple(q))
    return BoundingBox(*(dequantize_coord(k) for k in q.indices))


def encode_scene(s: SceneSemantics) -> np.ndarray:
    """Serialize a scene to a flat 0/1 ``uint8`` array, MSB first per index.

    A box whose min and max fall in the same 5-bit cell would decode with zero
    width, so it is rejected here rather than producing an undecodable frame.
    """
    bits = np.zeros(BITS_PER_BOX * len(s.boxes), dtype=np.uint8)
    shifts = np.arange(BITS_PER_COORD - 1, -1, -1)
    pos = 0
    for box in s.boxes:
        q = quantize_box(box)
        x0, y0, x1, y1 = q.indices
        if x0 >= x1 or y0 >= y1:
            raise ValidationError(f"box {box.as_tuple()} collapses to zero size at {BITS_PER_COORD}-bit resolution")
        for k in q.indices:
            bits[pos:pos + BITS_PER_COORD] = (k >> shifts) & 1
            pos += BITS_PER_COORD
    return bits


def decode_scene(bits, scene_id: Hashable = None) -> SceneSemantics:
    bits = np.asarray(bits, dtype=np.uint8).ravel()
    if bits.size % BITS_PER_BOX:
        raise FramingError(f"bit length {bits.size} is not a multiple of {BITS_PER_BOX}")
    if bits.size and bits.max() > 1:
        raise FramingError("bit string contains values other than 0/1")
    weights = 1 << np.arange(BITS_PER_COORD - 1, -1, -1)
    indices = bits.reshape(-1, 4, BITS_PER_COORD) @ weights
    boxes = [dequantize_box(QuantizedBox(tuple(int(k) for k in row))) for row in indices]
    return SceneSemantics(scene_id, boxes)


def bits_to_bytes(bits) -> tuple[bytes, int]:
    """Pack bits MSB-first into bytes; returns (payload, pad_bits)."""
    bits = np.asarray(bits, dtype=np.uint8).ravel()
    pad = (-bits.size) % 8
    return np.packbits(bits).tobytes(), pad


def bytes_to_bits(payload: bytes, pad_bits: int) -> np.ndarray:
    bits = np.unpackbits(np.frombuffer(payload, dtype=np.uint8))
    return bits[:bits.size - pad_bits] if pad_bits else bits


def iou(a: BoundingBox, b: BoundingBox) -> float:
    ix = max(0.0, min(a.x_max, b.x_max) - max(a.x_min, b.x_min))
    iy = max(0.0, min(a.y_max, b.y_max) - max(a.y_min, b.y_min))
    inter = ix * iy
    if inter == 0.0:
        return 0.0
    union = a.area + b.area - inter
    return min(1.0, inter / union)


def mask_to_boxes(mask) -> list[BoundingBox]:
    """Tight normalized boxes of the 4-connected foreground components.

    Output is sorted by ``(y_min, x_min)``.
    """
    mask = np.asarray(mask)
    if mask.ndim != 2 or mask.size == 0:
        raise ValidationError(f"mask must be a non-empty 2-D grid, got shape {mask.shape}")
    h, w = mask.shape
    labels, n = ndimage.label(mask.astype(bool))  # default structure is 4-connected
    boxes = []
    for sl in ndimage.find_objects(labels)[:n]:
        rows, cols = sl
        boxes.append(BoundingBox(cols.start / w, rows.start / h, cols.stop / w, rows.stop / h))
    boxes.sort(key=lambda b: (b.y_min, b.x_min))
    return boxes


def brightness_equalize(img, ref) -> np.ndarray:
    img = np.asarray(img, dtype=float)
    ref = np.asarray(ref, dtype=float)
    if img.shape != ref.shape:
        raise ValidationError(f"shape mismatch {img.shape} vs {ref.shape}")
    return img - img.mean() + ref.mean()


def match_boxes(truth: Sequence[BoundingBox], detected: Sequence[BoundingBox]) -> list[float]:
    """Best IoU of each ground-truth box against any detected box (0 if none)."""
    return [max((iou(t, d) for d in detected), default=0.0) for t in truth]

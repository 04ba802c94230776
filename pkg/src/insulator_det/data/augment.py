"""Multi-scale resizing, flips, integer translation, brightness jitter and stride padding."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from ..geometry import tight_box
from .raster import polygon_to_mask
from .records import DatasetRecord, Instance


@dataclass(frozen=True)
class AugmentationConfig:
    scale_min: float = 112.0
    scale_max: float = 144.0
    max_long_side: int = 160
    seed: int = 0
    hflip: bool = True
    vflip: bool = True
    # largest integer shift in pixels; moves objects relative to the stride grid
    max_shift: int = 16
    # images are scaled by a factor drawn from [1 - brightness, 1 + brightness]
    brightness: float = 0.15

    def __post_init__(self):
        if not 0 < self.scale_min <= self.scale_max <= self.max_long_side:
            raise ValueError(f"need 0 < scale_min <= scale_max <= max_long_side, got {self}")
        if self.max_shift < 0 or not 0 <= self.brightness < 1:
            raise ValueError(f"need max_shift >= 0 and 0 <= brightness < 1, got {self}")


def pad_to_multiple(record: DatasetRecord, multiple: int = 32) -> DatasetRecord:
    """Zero-pad image and masks on the bottom/right to multiples of ``multiple``."""
    h = -(-record.height // multiple) * multiple
    w = -(-record.width // multiple) * multiple
    if (h, w) == (record.height, record.width):
        return record
    image = None
    if record.image is not None:
        image = np.zeros((record.image.shape[0], h, w), dtype=record.image.dtype)
        image[:, : record.height, : record.width] = record.image
    instances = []
    for inst in record.instances:
        mask = np.zeros((h, w), dtype=bool)
        mask[: record.height, : record.width] = inst.mask
        instances.append(Instance(inst.class_id, list(inst.polygon), inst.box, mask))
    return DatasetRecord(record.image_id, h, w, image, instances)


def resize_image(image: np.ndarray, height: int, width: int) -> np.ndarray:
    t = torch.as_tensor(image, dtype=torch.float64)[None]
    out = F.interpolate(t, size=(height, width), mode="bilinear", align_corners=False)
    return out[0].clamp(0, 1).numpy()


def scale_record(record: DatasetRecord, height: int, width: int) -> DatasetRecord:
    """Resize to ``height x width``; polygons scale per axis and masks are re-rasterized."""
    sx = width / record.width
    sy = height / record.height
    image = None if record.image is None else resize_image(record.image, height, width)
    instances = []
    for inst in record.instances:
        poly = [(x * sx, y * sy) for x, y in inst.polygon]
        instances.append(Instance(inst.class_id, poly, tight_box(poly), polygon_to_mask(poly, height, width)))
    return DatasetRecord(record.image_id, height, width, image, instances)


def multi_scale_resize(record: DatasetRecord, cfg: AugmentationConfig, draw: float) -> DatasetRecord:
    """Resize the short side to ``scale_min + draw * (scale_max - scale_min)``.

    The long side is capped at ``cfg.max_long_side`` (aspect preserved) and the
    result is zero-padded to multiples of 32.
    """
    short = min(record.height, record.width)
    long = max(record.height, record.width)
    target = cfg.scale_min + draw * (cfg.scale_max - cfg.scale_min)
    factor = target / short
    if long * factor > cfg.max_long_side:
        factor = cfg.max_long_side / long
    h = max(int(round(record.height * factor)), 1)
    w = max(int(round(record.width * factor)), 1)
    scaled = record if (h, w) == (record.height, record.width) else scale_record(record, h, w)
    return pad_to_multiple(scaled)


def hflip_record(record: DatasetRecord) -> DatasetRecord:
    w = record.width
    image = None if record.image is None else record.image[:, :, ::-1].copy()
    instances = []
    for inst in record.instances:
        poly = [(w - x, y) for x, y in inst.polygon]
        instances.append(Instance(inst.class_id, poly, tight_box(poly), inst.mask[:, ::-1].copy()))
    return DatasetRecord(record.image_id, record.height, w, image, instances)


def vflip_record(record: DatasetRecord) -> DatasetRecord:
    h = record.height
    image = None if record.image is None else record.image[:, ::-1, :].copy()
    instances = []
    for inst in record.instances:
        poly = [(x, h - y) for x, y in inst.polygon]
        instances.append(Instance(inst.class_id, poly, tight_box(poly), inst.mask[::-1, :].copy()))
    return DatasetRecord(record.image_id, h, record.width, image, instances)


def shift_range(record: DatasetRecord, limit: int) -> tuple[tuple[int, int], tuple[int, int]]:
    """Inclusive ``(dx_lo, dx_hi), (dy_lo, dy_hi)`` keeping every instance box on the canvas."""
    if not record.instances:
        return (-limit, limit), (-limit, limit)
    x0 = min(math.floor(i.box.x0) for i in record.instances)
    y0 = min(math.floor(i.box.y0) for i in record.instances)
    x1 = max(math.ceil(i.box.x1) for i in record.instances)
    y1 = max(math.ceil(i.box.y1) for i in record.instances)
    return ((max(-x0, -limit), min(record.width - x1, limit)),
            (max(-y0, -limit), min(record.height - y1, limit)))


def translate_record(record: DatasetRecord, dx: int, dy: int) -> DatasetRecord:
    """Shift content by whole pixels on the same canvas, zero-filling the exposed border.

    Every instance box must stay on the canvas (see :func:`shift_range`), so
    polygons, boxes and masks move exactly and nothing is clipped.
    """
    h, w = record.height, record.width
    for inst in record.instances:
        b = inst.box
        if b.x0 + dx < 0 or b.y0 + dy < 0 or b.x1 + dx > w or b.y1 + dy > h:
            raise ValueError(f"shift ({dx}, {dy}) moves box {b.as_tuple()} off the {w}x{h} canvas")

    def move(a: np.ndarray) -> np.ndarray:
        out = np.zeros_like(a)
        src = a[..., max(-dy, 0):h - max(dy, 0), max(-dx, 0):w - max(dx, 0)]
        out[..., max(dy, 0):max(dy, 0) + src.shape[-2], max(dx, 0):max(dx, 0) + src.shape[-1]] = src
        return out

    image = None if record.image is None else move(record.image)
    instances = []
    for inst in record.instances:
        poly = [(x + dx, y + dy) for x, y in inst.polygon]
        instances.append(Instance(inst.class_id, poly, tight_box(poly), move(inst.mask)))
    return DatasetRecord(record.image_id, h, w, image, instances)


def scale_brightness(record: DatasetRecord, factor: float) -> DatasetRecord:
    if record.image is None or factor == 1.0:
        return record
    image = np.clip(record.image * factor, 0.0, 1.0)
    return DatasetRecord(record.image_id, record.height, record.width, image, list(record.instances))

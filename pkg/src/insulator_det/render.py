"""PNG overlays: translucent insulator masks, outlined defect boxes with labels."""

from __future__ import annotations

import io
import math
from typing import Sequence

import numpy as np
from PIL import Image, ImageDraw, ImageFont

from .data.records import CLASS_NAMES, INSULATOR
from .geometry import Detection

CLASS_COLORS = {0: (0, 200, 255), 1: (255, 40, 40)}
MASK_ALPHA = 0.45


def _to_uint8(image: np.ndarray) -> np.ndarray:
    return np.round(np.clip(image, 0, 1) * 255).astype(np.uint8).transpose(1, 2, 0)


def _box_pixels(det: Detection, width: int, height: int):
    x0 = max(math.floor(det.box.x0), 0)
    y0 = max(math.floor(det.box.y0), 0)
    x1 = min(math.ceil(det.box.x1), width)
    y1 = min(math.ceil(det.box.y1), height)
    return x0, y0, x1, y1


def render_overlay(image: np.ndarray, detections: Sequence[Detection],
                   masks: Sequence[np.ndarray | None] = ()) -> bytes:
    """``masks`` aligns with ``detections`` (``None`` where absent).

    Every pixel change stays inside its detection's box: mask fills only touch
    mask pixels and label text is clipped to the box.
    """
    rgb = _to_uint8(image)
    height, width = rgb.shape[:2]
    out = rgb.astype(np.float64)
    for i, det in enumerate(detections):
        m = masks[i] if i < len(masks) else None
        if det.class_id == INSULATOR and m is not None:
            color = np.array(CLASS_COLORS[det.class_id], dtype=np.float64)
            out[m] = (1 - MASK_ALPHA) * out[m] + MASK_ALPHA * color
    canvas = Image.fromarray(np.round(out).astype(np.uint8), "RGB")
    font = ImageFont.load_default()
    for det in detections:
        if det.class_id == INSULATOR:
            continue
        x0, y0, x1, y1 = _box_pixels(det, width, height)
        if x1 <= x0 or y1 <= y0:
            continue
        layer = canvas.copy()
        draw = ImageDraw.Draw(layer)
        color = CLASS_COLORS.get(det.class_id, (255, 255, 0))
        draw.rectangle([x0, y0, x1 - 1, y1 - 1], outline=color, width=1)
        draw.text((x0 + 2, y0 + 1), f"{CLASS_NAMES[det.class_id]} {det.score:.2f}", fill=color, font=font)
        canvas.paste(layer.crop((x0, y0, x1, y1)), (x0, y0))
    buf = io.BytesIO()
    canvas.save(buf, format="PNG")
    return buf.getvalue()


def encode_png(image: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(_to_uint8(image), "RGB").save(buf, format="PNG")
    return buf.getvalue()

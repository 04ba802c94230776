"""Even-odd polygon rasterization sampled at pixel centres."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .records import AnnotationError


def polygon_to_mask(polygon: Sequence[tuple[float, float]], height: int, width: int) -> np.ndarray:
    """Pixel ``(i, j)`` is set iff its centre ``(j + 0.5, i + 0.5)`` is inside by the even-odd rule."""
    pts = [(float(x), float(y)) for x, y in polygon]
    if len(set(pts)) < 3:
        raise AnnotationError(f"degenerate polygon with {len(set(pts))} distinct points")
    cx = np.arange(width) + 0.5
    cy = np.arange(height) + 0.5
    inside = np.zeros((height, width), dtype=bool)
    n = len(pts)
    for k in range(n):
        x1, y1 = pts[k]
        x2, y2 = pts[(k + 1) % n]
        if y1 == y2:
            continue
        crosses = (y1 <= cy) & (cy < y2) if y1 < y2 else (y2 <= cy) & (cy < y1)
        if not crosses.any():
            continue
        x_at = x1 + (cy[crosses] - y1) * (x2 - x1) / (y2 - y1)
        inside[crosses] ^= cx[None, :] < x_at[:, None]
    return inside

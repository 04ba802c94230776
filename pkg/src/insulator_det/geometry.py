"""Box and location arithmetic shared by the detector, mask branch and evaluator.

Scalar helpers operate on :class:`Box` / :class:`Location` values; the
``*_tensor`` variants are the batched forms used inside the network code and
must agree with the scalar ones.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import torch


@dataclass(frozen=True)
class Box:
    """Axis-aligned box ``(x0, y0)`` left-top to ``(x1, y1)`` right-bottom, in pixels."""

    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self):
        if self.x1 < self.x0 or self.y1 < self.y0:
            raise ValueError(f"invalid box {self.as_tuple()}: corners out of order")

    @property
    def width(self) -> float:
        return self.x1 - self.x0

    @property
    def height(self) -> float:
        return self.y1 - self.y0

    @property
    def area(self) -> float:
        return (self.x1 - self.x0) * (self.y1 - self.y0)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x0, self.y0, self.x1, self.y1)


@dataclass(frozen=True)
class Location:
    """Feature-map cell ``(p, q)`` at stride ``r`` with its image coordinates."""

    p: int
    q: int
    r: int
    x: float
    y: float


@dataclass(frozen=True)
class RegressionTarget:
    d_left: float
    d_top: float
    d_right: float
    d_bottom: float

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.d_left, self.d_top, self.d_right, self.d_bottom)


@dataclass(frozen=True)
class Detection:
    """A scored, classified box; ``score`` is ``cls_score * centerness``."""

    box: Box
    class_id: int
    cls_score: float
    centerness: float
    score: float
    level: int = 0

    @classmethod
    def from_scores(cls, box: Box, class_id: int, cls_score: float, centerness: float,
                    level: int = 0) -> "Detection":
        return cls(box, class_id, cls_score, centerness, cls_score * centerness, level)


def iou(a: Box, b: Box) -> float:
    """Overlap area divided by union area; 0.0 when the union is empty."""
    iw = min(a.x1, b.x1) - max(a.x0, b.x0)
    ih = min(a.y1, b.y1) - max(a.y0, b.y0)
    inter = iw * ih if iw > 0 and ih > 0 else 0.0
    union = a.area + b.area - inter
    if union <= 0:
        return 0.0
    return inter / union


def map_location(p: int, q: int, r: int) -> tuple[int, int]:
    """Image coordinates of feature cell ``(p, q)`` at stride ``r``."""
    if r <= 0:
        raise ValueError(f"stride must be >= 1, got {r}")
    if p < 0 or q < 0:
        raise ValueError(f"feature indices must be non-negative, got ({p}, {q})")
    half = r // 2
    return (half + p * r, half + q * r)


def make_location(p: int, q: int, r: int) -> Location:
    x, y = map_location(p, q, r)
    return Location(p, q, r, float(x), float(y))


def regression_targets(loc: Location, box: Box) -> RegressionTarget:
    """Distances from ``loc`` to the four box edges; negative when outside."""
    return RegressionTarget(loc.x - box.x0, loc.y - box.y0, box.x1 - loc.x, box.y1 - loc.y)


def decode_box(loc: Location, t: RegressionTarget) -> Box:
    if min(t.as_tuple()) < 0:
        raise ValueError(f"negative regression distance {t.as_tuple()}")
    return Box(loc.x - t.d_left, loc.y - t.d_top, loc.x + t.d_right, loc.y + t.d_bottom)


def _ratio(a: float, b: float) -> float:
    hi = max(a, b)
    if hi <= 0:
        return 0.0
    return min(a, b) / hi


def centerness_target(t: RegressionTarget) -> float:
    if min(t.as_tuple()) < 0:
        raise ValueError(f"negative regression distance {t.as_tuple()}")
    return math.sqrt(_ratio(t.d_left, t.d_right) * _ratio(t.d_top, t.d_bottom))


def _nms_order(dets: Sequence[Detection]) -> list[int]:
    # Python's sort is stable, so input order breaks the remaining ties.
    return sorted(range(len(dets)), key=lambda i: (-dets[i].score, dets[i].class_id))


def nms(dets: Sequence[Detection], iou_thresh: float) -> list[Detection]:
    """Greedy per-class non-maximum suppression.

    A detection survives iff its IOU with every already kept detection of the
    same class is below ``iou_thresh``. Output is sorted by score descending.
    """
    if not 0 < iou_thresh < 1:
        raise ValueError(f"iou_thresh must lie in (0, 1), got {iou_thresh}")
    order = _nms_order(dets)
    if not order:
        return []
    boxes = torch.tensor([dets[i].box.as_tuple() for i in order], dtype=torch.float64)
    classes = torch.tensor([dets[i].class_id for i in order])
    overlap = (box_iou_tensor(boxes, boxes) >= iou_thresh) & (classes[:, None] == classes[None, :])
    suppressed = torch.zeros(len(order), dtype=torch.bool)
    kept: list[Detection] = []
    for rank, i in enumerate(order):
        if suppressed[rank]:
            continue
        kept.append(dets[i])
        suppressed |= overlap[rank]
    return kept


# ---------------------------------------------------------------------------
# batched forms


def location_grid(height: int, width: int, stride: int, dtype=torch.float64) -> torch.Tensor:
    """``(height*width, 2)`` image coordinates of every cell, row-major (q outer, p inner)."""
    half = stride // 2
    xs = torch.arange(width, dtype=dtype) * stride + half
    ys = torch.arange(height, dtype=dtype) * stride + half
    yy, xx = torch.meshgrid(ys, xs, indexing="ij")
    return torch.stack([xx.reshape(-1), yy.reshape(-1)], dim=1)


def regression_targets_tensor(points: torch.Tensor, boxes: torch.Tensor) -> torch.Tensor:
    """``(N, 2)`` points vs ``(M, 4)`` boxes -> ``(N, M, 4)`` ltrb distances."""
    x = points[:, 0, None]
    y = points[:, 1, None]
    return torch.stack(
        [x - boxes[None, :, 0], y - boxes[None, :, 1], boxes[None, :, 2] - x, boxes[None, :, 3] - y],
        dim=2,
    )


def decode_boxes_tensor(points: torch.Tensor, ltrb: torch.Tensor) -> torch.Tensor:
    return torch.stack(
        [points[:, 0] - ltrb[:, 0], points[:, 1] - ltrb[:, 1],
         points[:, 0] + ltrb[:, 2], points[:, 1] + ltrb[:, 3]],
        dim=1,
    )


def centerness_tensor(ltrb: torch.Tensor) -> torch.Tensor:
    lr = ltrb[..., [0, 2]]
    tb = ltrb[..., [1, 3]]
    lr_hi = lr.max(dim=-1).values
    tb_hi = tb.max(dim=-1).values
    lr_ratio = torch.where(lr_hi > 0, lr.min(dim=-1).values / lr_hi.clamp(min=1e-12), torch.zeros_like(lr_hi))
    tb_ratio = torch.where(tb_hi > 0, tb.min(dim=-1).values / tb_hi.clamp(min=1e-12), torch.zeros_like(tb_hi))
    return torch.sqrt(lr_ratio * tb_ratio)


def box_iou_tensor(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Pairwise IOU of ``(N, 4)`` and ``(M, 4)`` xyxy boxes."""
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    lt = torch.maximum(a[:, None, :2], b[None, :, :2])
    rb = torch.minimum(a[:, None, 2:], b[None, :, 2:])
    wh = (rb - lt).clamp(min=0)
    inter = wh[..., 0] * wh[..., 1]
    union = area_a[:, None] + area_b[None, :] - inter
    return torch.where(union > 0, inter / union.clamp(min=1e-12), torch.zeros_like(union))


def clip_box(box: Box, width: float, height: float) -> Box:
    x0 = min(max(box.x0, 0.0), width)
    y0 = min(max(box.y0, 0.0), height)
    x1 = min(max(box.x1, x0), width)
    y1 = min(max(box.y1, y0), height)
    return Box(x0, y0, x1, y1)


def tight_box(points: Iterable[tuple[float, float]]) -> Box:
    pts = list(points)
    xs = [p[0] for p in pts]
    ys = [p[1] for p in pts]
    return Box(min(xs), min(ys), max(xs), max(ys))

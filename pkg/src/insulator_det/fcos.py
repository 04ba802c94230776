"""Anchor-free per-location detector: classification, centerness and ltrb regression."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import torch
import torch.nn.functional as F
from torch import nn

from .geometry import (
    Box,
    Detection,
    centerness_tensor,
    clip_box,
    decode_boxes_tensor,
    location_grid,
    nms,
    regression_targets_tensor,
)

BACKGROUND = -1
DEFAULT_RANGES = ((0.0, 64.0), (64.0, 128.0), (128.0, 256.0), (256.0, 512.0), (512.0, math.inf))


def level_ranges(num_levels: int) -> list[tuple[float, float]]:
    """Size ranges for P3.. with the top configured level left unbounded."""
    ranges = list(DEFAULT_RANGES[:num_levels])
    lo, _ = ranges[-1]
    ranges[-1] = (lo, math.inf)
    return ranges


class FCOSHead(nn.Module):
    """Shared towers applied to every pyramid level.

    The centerness output sits beside the classification output on the
    classification tower; regression has its own tower.
    """

    def __init__(self, in_channels: int, num_classes: int = 2, tower_depth: int = 2,
                 prior_prob: float = 0.01):
        super().__init__()
        self.num_classes = num_classes
        self.prior_prob = prior_prob
        self.cls_tower = nn.ModuleList(nn.Conv2d(in_channels, in_channels, 3, padding=1) for _ in range(tower_depth))
        self.reg_tower = nn.ModuleList(nn.Conv2d(in_channels, in_channels, 3, padding=1) for _ in range(tower_depth))
        self.cls_logits = nn.Conv2d(in_channels, num_classes, 3, padding=1)
        self.centerness = nn.Conv2d(in_channels, 1, 3, padding=1)
        self.bbox_reg = nn.Conv2d(in_channels, 4, 3, padding=1)

    def forward_level(self, x):
        c = x
        for conv in self.cls_tower:
            c = F.relu(conv(c))
        r = x
        for conv in self.reg_tower:
            r = F.relu(conv(r))
        return self.cls_logits(c), self.centerness(c), self.bbox_reg(r)

    def forward(self, pyramid, strides: Sequence[int]) -> "HeadOutputs":
        cls, ctr, reg = [], [], []
        for feat in pyramid:
            a, b, c = self.forward_level(feat)
            cls.append(a)
            ctr.append(b)
            reg.append(c)
        return HeadOutputs(cls, ctr, reg, list(strides))


@dataclass
class HeadOutputs:
    """Per-level raw outputs, each ``N x K x H x W`` (or ``K x H x W`` for one image)."""

    cls_logits: list[torch.Tensor]
    centerness_logits: list[torch.Tensor]
    reg_raw: list[torch.Tensor]
    strides: list[int]

    def image(self, i: int) -> "HeadOutputs":
        return HeadOutputs([t[i] for t in self.cls_logits], [t[i] for t in self.centerness_logits],
                           [t[i] for t in self.reg_raw], self.strides)

    @property
    def shapes(self) -> list[tuple[int, int]]:
        return [tuple(t.shape[-2:]) for t in self.cls_logits]

    def flat(self):
        """Concatenate levels into ``(N, L, K)`` tensors (level-major, row-major within a level)."""
        def cat(ts):
            return torch.cat([t.flatten(-2).transpose(-1, -2) for t in ts], dim=-2)
        return cat(self.cls_logits), cat(self.centerness_logits)[..., 0], cat(self.reg_raw)


@dataclass
class TargetAssignment:
    """Flattened per-location targets across all levels of one image."""

    class_targets: torch.Tensor     # (L,) long, BACKGROUND for negatives
    reg_targets: torch.Tensor       # (L, 4) ltrb in pixels, valid at positives
    centerness_targets: torch.Tensor  # (L,)
    matched_gt: torch.Tensor        # (L,) long, -1 for negatives
    points: torch.Tensor            # (L, 2) image coordinates
    strides: torch.Tensor           # (L,) stride of each location's level

    @property
    def positive(self) -> torch.Tensor:
        return self.class_targets != BACKGROUND


def pyramid_points(shapes: Sequence[tuple[int, int]], strides: Sequence[int], dtype=torch.float64):
    points, level_strides = [], []
    for (h, w), s in zip(shapes, strides):
        points.append(location_grid(h, w, s, dtype=dtype))
        level_strides.append(torch.full((h * w,), float(s), dtype=dtype))
    return torch.cat(points), torch.cat(level_strides)


def assign_targets(shapes: Sequence[tuple[int, int]], strides: Sequence[int],
                   gt_classes: Sequence[int], gt_boxes, ranges: Sequence[tuple[float, float]] | None = None,
                   use_level_ranges: bool = True) -> TargetAssignment:
    """Label every pyramid location with a class, ltrb distances and centerness.

    A location is a candidate for a GT box when it lies strictly inside it and
    its largest distance falls in ``(lo, hi]`` for the location's level. Among
    several candidates the smallest-area box wins (lowest index on ties).
    """
    if ranges is None:
        ranges = level_ranges(len(shapes))
    points, level_strides = pyramid_points(shapes, strides)
    lo = torch.cat([torch.full((h * w,), r[0], dtype=torch.float64) for (h, w), r in zip(shapes, ranges)])
    hi = torch.cat([torch.full((h * w,), r[1], dtype=torch.float64) for (h, w), r in zip(shapes, ranges)])
    n = points.shape[0]
    boxes = torch.as_tensor(gt_boxes, dtype=torch.float64).reshape(-1, 4)
    classes = torch.as_tensor(list(gt_classes), dtype=torch.long)
    if boxes.shape[0] == 0:
        return TargetAssignment(
            torch.full((n,), BACKGROUND, dtype=torch.long), torch.zeros(n, 4, dtype=torch.float64),
            torch.zeros(n, dtype=torch.float64), torch.full((n,), -1, dtype=torch.long), points, level_strides,
        )
    ltrb = regression_targets_tensor(points, boxes)
    candidate = ltrb.min(dim=2).values > 0
    if use_level_ranges:
        max_d = ltrb.max(dim=2).values
        candidate &= (max_d > lo[:, None]) & (max_d <= hi[:, None])
    area = (boxes[:, 2] - boxes[:, 0]) * (boxes[:, 3] - boxes[:, 1])
    masked_area = torch.where(candidate, area[None, :].expand(n, -1), torch.full_like(ltrb[..., 0], math.inf))
    best_area, matched = masked_area.min(dim=1)
    positive = torch.isfinite(best_area)
    matched = torch.where(positive, matched, torch.full_like(matched, -1))
    cls = torch.where(positive, classes[matched.clamp(min=0)], torch.full_like(matched, BACKGROUND))
    reg = ltrb[torch.arange(n), matched.clamp(min=0)]
    reg = torch.where(positive[:, None], reg, torch.zeros_like(reg))
    ctr = torch.where(positive, centerness_tensor(reg), torch.zeros(n, dtype=torch.float64))
    return TargetAssignment(cls, reg, ctr, matched, points, level_strides)


def focal_cls_loss(cls_logits: torch.Tensor, class_targets: torch.Tensor,
                   alpha: float = 0.25, gamma: float = 2.0) -> torch.Tensor:
    """Sigmoid focal loss summed over locations and classes, divided by max(#positives, 1)."""
    onehot = torch.zeros_like(cls_logits)
    pos = class_targets != BACKGROUND
    onehot[pos, class_targets[pos]] = 1.0
    p = torch.sigmoid(cls_logits)
    ce = F.binary_cross_entropy_with_logits(cls_logits, onehot, reduction="none")
    p_t = p * onehot + (1 - p) * (1 - onehot)
    alpha_t = alpha * onehot + (1 - alpha) * (1 - onehot)
    loss = alpha_t * (1 - p_t) ** gamma * ce
    return loss.sum() / max(int(pos.sum()), 1)


def ltrb_iou(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """IOU of two boxes that share their anchor location, given as ltrb distances."""
    pred_area = (pred[:, 0] + pred[:, 2]) * (pred[:, 1] + pred[:, 3])
    target_area = (target[:, 0] + target[:, 2]) * (target[:, 1] + target[:, 3])
    w = torch.minimum(pred[:, 0], target[:, 0]) + torch.minimum(pred[:, 2], target[:, 2])
    h = torch.minimum(pred[:, 1], target[:, 1]) + torch.minimum(pred[:, 3], target[:, 3])
    inter = w * h
    return inter / (pred_area + target_area - inter)


def iou_reg_loss(pred: torch.Tensor, target: torch.Tensor, weights: torch.Tensor | None = None) -> torch.Tensor:
    """``-ln(IOU)`` averaged over positives, weighted by the centerness targets."""
    if pred.shape[0] == 0:
        return pred.sum() * 0.0
    losses = -torch.log(ltrb_iou(pred, target).clamp(min=1e-9))
    if weights is None:
        return losses.mean()
    return (losses * weights).sum() / weights.sum().clamp(min=1e-12)


def centerness_loss(centerness_logits: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    if centerness_logits.numel() == 0:
        return centerness_logits.sum() * 0.0
    return F.binary_cross_entropy_with_logits(centerness_logits, targets, reduction="mean")


def detection_losses(outputs: HeadOutputs, assignments: Sequence[TargetAssignment],
                     alpha: float = 0.25, gamma: float = 2.0) -> dict[str, torch.Tensor]:
    """Classification, regression and centerness losses for a batch."""
    cls, ctr, reg = outputs.flat()
    cls = cls.reshape(-1, cls.shape[-1])
    ctr = ctr.reshape(-1)
    reg = reg.reshape(-1, 4)
    class_targets = torch.cat([a.class_targets for a in assignments])
    pos = class_targets != BACKGROUND
    reg_t = torch.cat([a.reg_targets for a in assignments]).to(reg.dtype)
    ctr_t = torch.cat([a.centerness_targets for a in assignments]).to(reg.dtype)
    strides = torch.cat([a.strides for a in assignments]).to(reg.dtype)
    pred_ltrb = torch.exp(reg[pos].clamp(max=20.0)) * strides[pos, None]
    return {
        "cls": focal_cls_loss(cls, class_targets, alpha, gamma),
        "reg": iou_reg_loss(pred_ltrb, reg_t[pos], ctr_t[pos]),
        "ctr": centerness_loss(ctr[pos], ctr_t[pos]),
    }


def decode_detections(outputs: HeadOutputs, image_size: tuple[int, int], score_thresh: float = 0.05,
                      pre_nms_topk: int = 1000, nms_thresh: float = 0.6, max_dets: int = 100,
                      num_levels_offset: int = 3) -> list[Detection]:
    """Turn one image's head outputs into NMS-filtered detections.

    ``image_size`` is ``(height, width)``; boxes are clipped to it.
    """
    height, width = image_size
    dets: list[Detection] = []
    for li, (cls_t, ctr_t, reg_t, stride) in enumerate(
            zip(outputs.cls_logits, outputs.centerness_logits, outputs.reg_raw, outputs.strides)):
        h, w = cls_t.shape[-2:]
        cls_p = torch.sigmoid(cls_t.detach().double()).reshape(cls_t.shape[0], -1).t()
        ctr_p = torch.sigmoid(ctr_t.detach().double()).reshape(-1)
        scores = cls_p * ctr_p[:, None]
        keep = scores > score_thresh
        if not keep.any():
            continue
        loc_idx, cls_idx = keep.nonzero(as_tuple=True)
        cand = scores[loc_idx, cls_idx]
        if cand.numel() > pre_nms_topk:
            top = torch.topk(cand, pre_nms_topk, sorted=True).indices
            # topk order is not stable; restore location order among the chosen ones
            top = top.sort().values
            loc_idx, cls_idx, cand = loc_idx[top], cls_idx[top], cand[top]
        points = location_grid(h, w, stride)[loc_idx]
        ltrb = torch.exp(reg_t.detach().double().reshape(4, -1).t()[loc_idx]) * stride
        boxes = decode_boxes_tensor(points, ltrb)
        for j in range(boxes.shape[0]):
            x0, y0, x1, y1 = boxes[j].tolist()
            box = clip_box(Box(x0, y0, max(x1, x0), max(y1, y0)), width, height)
            dets.append(Detection.from_scores(
                box, int(cls_idx[j]), float(cls_p[loc_idx[j], cls_idx[j]]), float(ctr_p[loc_idx[j]]),
                level=li + num_levels_offset,
            ))
    return nms(dets, nms_thresh)[:max_dets]

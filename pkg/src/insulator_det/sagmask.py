"""Spatial-attention-guided mask branch.

ROI features are bilinearly pooled from one pyramid level, refined by shared
convs, gated by a sigmoid spatial attention map built from channel-wise max
and mean pooling, upsampled 2x and projected to per-class mask logits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .geometry import Box, Detection


@dataclass
class RoiFeature:
    box: Box
    features: torch.Tensor  # C x S x S
    level: int
    detection: Detection | None = None


@dataclass
class MaskInstance:
    detection: Detection
    mask_logits: torch.Tensor  # 2S x 2S, for the detection's class
    binary_mask: np.ndarray    # H x W bool


def attention_pool(x: torch.Tensor, mode: str = "concat") -> torch.Tensor:
    """Channel-wise max and mean maps, stacked (``concat``) or multiplied (``product``)."""
    p_max = x.max(dim=-3, keepdim=True).values
    p_avg = x.mean(dim=-3, keepdim=True)
    if mode == "concat":
        return torch.cat([p_max, p_avg], dim=-3)
    if mode == "product":
        return p_max * p_avg
    raise ValueError(f"unknown attention pooling mode {mode!r}")


def spatial_attention(x: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor,
                      mode: str = "concat") -> torch.Tensor:
    """``sigmoid(conv3x3(pool(x)))``; returns a 1 x H x W map (batched input keeps N)."""
    squeeze = x.dim() == 3
    if squeeze:
        x = x.unsqueeze(0)
    att = torch.sigmoid(F.conv2d(attention_pool(x, mode), weight, bias, padding=1))
    return att.squeeze(0) if squeeze else att


def apply_attention(att: torch.Tensor, x: torch.Tensor) -> torch.Tensor:
    if att.shape[-2:] != x.shape[-2:] or att.shape[-3] != 1:
        raise ValueError(f"attention map {tuple(att.shape)} does not fit features {tuple(x.shape)}")
    return att * x


def roi_align(feature: torch.Tensor, boxes: torch.Tensor, size: int, scale: float, offset: float) -> torch.Tensor:
    """Bilinear samples at ``size x size`` cell centres inside each box.

    ``feature`` is ``C x H x W``; image coordinate ``x`` maps to feature column
    ``(x - offset) / scale`` and samples are clamped to the map border.
    Returns ``K x C x size x size``.
    """
    c, h, w = feature.shape
    boxes = boxes.to(torch.float64)
    frac = (torch.arange(size, dtype=torch.float64) + 0.5) / size
    xs = boxes[:, 0, None] + frac[None, :] * (boxes[:, 2] - boxes[:, 0])[:, None]
    ys = boxes[:, 1, None] + frac[None, :] * (boxes[:, 3] - boxes[:, 1])[:, None]
    u = ((xs - offset) / scale).clamp(0, w - 1)
    v = ((ys - offset) / scale).clamp(0, h - 1)
    u0 = u.floor().long()
    v0 = v.floor().long()
    u1 = (u0 + 1).clamp(max=w - 1)
    v1 = (v0 + 1).clamp(max=h - 1)
    wu = (u - u0).to(feature.dtype)
    wv = (v - v0).to(feature.dtype)
    flat = feature.reshape(c, h * w)

    def gather(vi, ui):
        idx = vi[:, :, None] * w + ui[:, None, :]
        return flat[:, idx].permute(1, 0, 2, 3)

    top = gather(v0, u0) * (1 - wu)[:, None, None, :] + gather(v0, u1) * wu[:, None, None, :]
    bottom = gather(v1, u0) * (1 - wu)[:, None, None, :] + gather(v1, u1) * wu[:, None, None, :]
    return top * (1 - wv)[:, None, :, None] + bottom * wv[:, None, :, None]


def roi_level(box: Box, image_area: float, min_level: int, max_level: int) -> int:
    """Scale-adaptive level: ``ceil(max_level - log2(image_area / box_area))``, clamped."""
    if box.area <= 0:
        raise ValueError(f"ROI box {box.as_tuple()} has zero area")
    level = math.ceil(max_level - math.log2(image_area / box.area))
    return min(max(level, min_level), max_level)


def roi_extract(pyramid: Mapping[int, torch.Tensor], strides: Mapping[int, int], box: Box,
                image_size: tuple[int, int], size: int = 14, levels: Sequence[int] | None = None) -> RoiFeature:
    """Pool a single-image ``pyramid`` (level -> C x H x W) inside ``box``."""
    levels = sorted(levels if levels is not None else pyramid)
    level = roi_level(box, image_size[0] * image_size[1], levels[0], levels[-1])
    stride = strides[level]
    feat = roi_align(pyramid[level], torch.tensor([box.as_tuple()]), size, stride, stride // 2)[0]
    return RoiFeature(box, feat, level)


class MaskHead(nn.Module):
    """Shared convs -> spatial attention gate -> 2x deconv -> per-class 1x1 logits."""

    def __init__(self, channels: int, num_classes: int = 2, n_convs: int = 2, attention_mode: str = "concat"):
        super().__init__()
        self.attention_mode = attention_mode
        self.convs = nn.ModuleList(nn.Conv2d(channels, channels, 3, padding=1) for _ in range(n_convs))
        self.attention = nn.Conv2d(2 if attention_mode == "concat" else 1, 1, 3, padding=1)
        self.deconv = nn.ConvTranspose2d(channels, channels, 2, stride=2)
        self.predictor = nn.Conv2d(channels, num_classes, 1)

    def forward(self, rois: torch.Tensor) -> torch.Tensor:
        x = rois
        for conv in self.convs:
            x = F.relu(conv(x))
        att = spatial_attention(x, self.attention.weight, self.attention.bias, self.attention_mode)
        x = apply_attention(att, x)
        x = F.relu(self.deconv(x))
        return self.predictor(x)


def _pixel_centres_in(lo: float, hi: float, n: int) -> np.ndarray:
    idx = np.arange(n)
    centre = idx + 0.5
    return idx[(centre >= lo) & (centre < hi)]


def paste_mask(mask_logits: torch.Tensor, box: Box, image_h: int, image_w: int, thresh: float = 0.5) -> np.ndarray:
    """Resize ``sigmoid(mask_logits)`` into ``box`` and threshold on an ``H x W`` canvas.

    Only pixels whose centres fall in the half-open box ``[x0, x1) x [y0, y1)``
    can be set.
    """
    canvas = np.zeros((image_h, image_w), dtype=bool)
    cols = _pixel_centres_in(box.x0, box.x1, image_w)
    rows = _pixel_centres_in(box.y0, box.y1, image_h)
    if cols.size == 0 or rows.size == 0 or box.width <= 0 or box.height <= 0:
        return canvas
    prob = torch.sigmoid(mask_logits.detach().double())
    m_h, m_w = prob.shape
    u = ((cols + 0.5 - box.x0) / box.width * m_w - 0.5).clip(0, m_w - 1)
    v = ((rows + 0.5 - box.y0) / box.height * m_h - 0.5).clip(0, m_h - 1)
    u0 = np.floor(u).astype(int)
    v0 = np.floor(v).astype(int)
    u1 = np.minimum(u0 + 1, m_w - 1)
    v1 = np.minimum(v0 + 1, m_h - 1)
    wu = (u - u0)[None, :]
    wv = (v - v0)[:, None]
    p = prob.numpy()
    vals = ((p[np.ix_(v0, u0)] * (1 - wu) + p[np.ix_(v0, u1)] * wu) * (1 - wv)
            + (p[np.ix_(v1, u0)] * (1 - wu) + p[np.ix_(v1, u1)] * wu) * wv)
    canvas[np.ix_(rows, cols)] = vals >= thresh
    return canvas


def mask_targets(gt_mask: np.ndarray, boxes: torch.Tensor, size: int) -> torch.Tensor:
    """Crop-and-resample a full-image GT mask into ``size x size`` binary targets per box."""
    m = torch.as_tensor(np.asarray(gt_mask, dtype=np.float64))[None]
    sampled = roi_align(m, boxes, size, scale=1.0, offset=0.5)[:, 0]
    return (sampled >= 0.5).to(torch.float64)


def mask_loss(logits: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    """Mean per-pixel BCE between ``K x M x M`` logits and binary targets."""
    if logits.numel() == 0:
        return logits.sum() * 0.0
    return F.binary_cross_entropy_with_logits(logits, targets.to(logits.dtype), reduction="mean")

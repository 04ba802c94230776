"""Improved VoVNet feature extractor.

OSA blocks concatenate every intermediate 3x3 conv output once, fuse them with
a 1x1 conv, gate the result with a single-FC eSE channel attention and add the
block input back whenever the channel count is unchanged.
"""

from __future__ import annotations

from typing import Sequence

import torch
import torch.nn.functional as F
from torch import nn


def ese_gate(x: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor) -> torch.Tensor:
    """Scale each channel of ``x`` by ``sigmoid(W @ gap(x) + b)``.

    Accepts ``C x H x W`` or ``N x C x H x W`` input; ``weight`` is ``C x C``.
    """
    squeeze = x.dim() == 3
    if squeeze:
        x = x.unsqueeze(0)
    if weight.shape != (x.shape[1], x.shape[1]):
        raise ValueError(f"eSE weight {tuple(weight.shape)} does not match {x.shape[1]} channels")
    pooled = x.mean(dim=(2, 3))
    gate = torch.sigmoid(pooled @ weight.t() + bias)
    out = x * gate[:, :, None, None]
    return out.squeeze(0) if squeeze else out


class ESE(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.fc = nn.Linear(channels, channels)

    def forward(self, x):
        return ese_gate(x, self.fc.weight, self.fc.bias)


class OSABlock(nn.Module):
    """One-shot aggregation block with identity residual and eSE gate."""

    def __init__(self, in_channels: int, mid_channels: int, out_channels: int, n_convs: int = 2):
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        layers = []
        ch = in_channels
        for _ in range(n_convs):
            layers.append(nn.Conv2d(ch, mid_channels, 3, padding=1))
            ch = mid_channels
        self.convs = nn.ModuleList(layers)
        self.concat = nn.Conv2d(in_channels + n_convs * mid_channels, out_channels, 1)
        self.ese = ESE(out_channels)

    def forward(self, x):
        feats = [x]
        y = x
        for conv in self.convs:
            y = F.relu(conv(y))
            feats.append(y)
        agg = F.relu(self.concat(torch.cat(feats, dim=1)))
        out = self.ese(agg)
        if self.out_channels == self.in_channels:
            out = out + x
        return out


class VoVNet(nn.Module):
    """Stem of two stride-2 convs, then three (max-pool, OSA) stages.

    Returns ``{"C3", "C4", "C5"}`` at strides 8, 16 and 32.
    """

    strides = (8, 16, 32)

    def __init__(self, widths: Sequence[int] = (16, 32, 64), stem_channels: int = 16,
                 mid_channels: Sequence[int] | None = None, n_convs: int = 2,
                 in_channels: int = 3):
        super().__init__()
        if len(widths) != 3:
            raise ValueError("VoVNet expects exactly three stage widths")
        if mid_channels is None:
            mid_channels = [max(w // 2, 4) for w in widths]
        self.widths = tuple(widths)
        self.stem1 = nn.Conv2d(in_channels, stem_channels, 3, stride=2, padding=1)
        self.stem2 = nn.Conv2d(stem_channels, stem_channels, 3, stride=2, padding=1)
        stages = []
        ch = stem_channels
        for w, m in zip(widths, mid_channels):
            stages.append(OSABlock(ch, m, w, n_convs))
            ch = w
        self.stages = nn.ModuleList(stages)

    def forward(self, image):
        h, w = image.shape[-2:]
        if h % 32 or w % 32:
            raise ValueError(f"image sides must be multiples of 32, got {h}x{w}")
        x = F.relu(self.stem1(image))
        x = F.relu(self.stem2(x))
        out = {}
        for name, stage in zip(("C3", "C4", "C5"), self.stages):
            x = stage(F.max_pool2d(x, 2))
            out[name] = x
        return out

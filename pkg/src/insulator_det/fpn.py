"""Feature pyramid over the C3-C5 backbone outputs."""

from __future__ import annotations

from typing import Sequence

import torch.nn.functional as F
from torch import nn

LEVEL_STRIDES = {3: 8, 4: 16, 5: 32, 6: 64, 7: 128}


class FPN(nn.Module):
    """Lateral 1x1 convs, nearest top-down merge, 3x3 output convs.

    ``num_levels`` selects P3.. upward (1 to 5 levels). P6 and P7 come from
    stride-2 3x3 convs on P5 and P6. The module is linear in its inputs, so
    zero biases give ``fpn(a * C) == a * fpn(C)``.
    """

    def __init__(self, in_channels: Sequence[int], width: int, num_levels: int = 5):
        super().__init__()
        if not 1 <= num_levels <= 5:
            raise ValueError(f"num_levels must be in [1, 5], got {num_levels}")
        self.width = width
        self.num_levels = num_levels
        self.lateral = nn.ModuleList(nn.Conv2d(c, width, 1) for c in in_channels)
        n_out = min(num_levels, 3)
        self.output = nn.ModuleList(nn.Conv2d(width, width, 3, padding=1) for _ in range(n_out))
        self.extra = nn.ModuleList(
            nn.Conv2d(width, width, 3, stride=2, padding=1) for _ in range(max(num_levels - 3, 0))
        )

    @property
    def levels(self) -> list[int]:
        return list(range(3, 3 + self.num_levels))

    @property
    def strides(self) -> list[int]:
        return [LEVEL_STRIDES[l] for l in self.levels]

    def forward(self, feats):
        cs = [feats["C3"], feats["C4"], feats["C5"]]
        for i, (c, lat) in enumerate(zip(cs, self.lateral)):
            if c.shape[1] != lat.in_channels:
                raise ValueError(f"C{i + 3} has {c.shape[1]} channels, lateral expects {lat.in_channels}")
        merged = [None, None, None]
        top = self.lateral[2](cs[2])
        merged[2] = top
        for i in (1, 0):
            lat = self.lateral[i](cs[i])
            up = F.interpolate(top, scale_factor=2, mode="nearest")[..., : lat.shape[-2], : lat.shape[-1]]
            top = lat + up
            merged[i] = top
        out = {}
        for i, conv in enumerate(self.output):
            out[f"P{i + 3}"] = conv(merged[i])
        if self.extra:
            p = out["P5"]
            for j, conv in enumerate(self.extra):
                p = conv(p)
                out[f"P{6 + j}"] = p
        return out

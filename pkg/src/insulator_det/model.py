"""Backbone + FPN + detector head + mask head, wired as one module."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import torch
from torch import nn

from .backbone import VoVNet
from .fcos import FCOSHead, HeadOutputs
from .fpn import FPN
from .sagmask import MaskHead

MASK_LEVELS = (3, 4, 5)


@dataclass
class ModelConfig:
    widths: tuple[int, int, int] = (16, 32, 64)
    stem_channels: int = 16
    fpn_width: int = 32
    num_levels: int = 2
    tower_depth: int = 2
    mask_convs: int = 2
    roi_size: int = 14
    attention_mode: str = "concat"
    num_classes: int = 2

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        if "widths" in d:
            d["widths"] = tuple(d["widths"])
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["widths"] = list(self.widths)
        return d


class InsulatorModel(nn.Module):
    def __init__(self, cfg: ModelConfig | None = None):
        super().__init__()
        cfg = cfg or ModelConfig()
        self.cfg = cfg
        self.backbone = VoVNet(cfg.widths, cfg.stem_channels)
        self.fpn = FPN(cfg.widths, cfg.fpn_width, cfg.num_levels)
        self.head = FCOSHead(cfg.fpn_width, cfg.num_classes, cfg.tower_depth)
        self.mask_head = MaskHead(cfg.fpn_width, cfg.num_classes, cfg.mask_convs, cfg.attention_mode)

    @property
    def levels(self) -> list[int]:
        return self.fpn.levels

    @property
    def strides(self) -> list[int]:
        return self.fpn.strides

    @property
    def mask_levels(self) -> list[int]:
        return [l for l in self.levels if l in MASK_LEVELS]

    def pyramid(self, images: torch.Tensor) -> dict[int, torch.Tensor]:
        feats = self.fpn(self.backbone(images))
        return {l: feats[f"P{l}"] for l in self.levels}

    def detect(self, pyramid: dict[int, torch.Tensor]) -> HeadOutputs:
        return self.head([pyramid[l] for l in self.levels], self.strides)


def init_params(model: nn.Module, seed: int) -> nn.Module:
    """Seeded He-normal init for conv/linear weights, zero biases.

    Draws are made in float64 and cast, so float32 and float64 copies of the
    same architecture start from the same values. Output convs of the detector
    get std 0.01 and the classification bias starts at the 0.01 prior.
    """
    gen = torch.Generator().manual_seed(int(seed))
    for name, module in model.named_modules():
        if isinstance(module, (nn.Conv2d, nn.ConvTranspose2d, nn.Linear)):
            w = module.weight
            if isinstance(module, nn.ConvTranspose2d):
                fan_in = w.shape[0]
            else:
                fan_in = w[0].numel()
            std = math.sqrt(2.0 / fan_in)
            if name.split(".")[-1] in ("cls_logits", "centerness", "bbox_reg"):
                std = 0.01
            with torch.no_grad():
                w.copy_(torch.randn(w.shape, generator=gen, dtype=torch.float64) * std)
                if module.bias is not None:
                    module.bias.zero_()
    head = model if isinstance(model, FCOSHead) else getattr(model, "head", None)
    if isinstance(head, FCOSHead):
        with torch.no_grad():
            head.cls_logits.bias.fill_(-math.log((1 - head.prior_prob) / head.prior_prob))
    return model


def build_model(cfg: ModelConfig | None = None, seed: int = 0, dtype=torch.float32) -> InsulatorModel:
    model = InsulatorModel(cfg).to(dtype)
    return init_params(model, seed)


"""Training and inference configuration (the desk profile is the default)."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields

from .data.augment import AugmentationConfig
from .model import ModelConfig


@dataclass
class InferenceConfig:
    score_thresh: float = 0.05
    pre_nms_topk: int = 1000
    nms_thresh: float = 0.6
    max_dets: int = 100
    mask_thresh: float = 0.5


@dataclass
class TrainConfig:
    seed: int = 0
    # Desk profile: small enough to overfit the synthetic set on one CPU in minutes.
    iterations: int = 3000
    batch_size: int = 8
    # Optimizer, schedule and loss weights are desk choices.
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 1e-4
    warmup_iters: int = 100
    grad_clip: float | None = 10.0
    loss_weights: dict = field(default_factory=lambda: {"cls": 1.0, "reg": 1.0, "ctr": 1.0, "mask": 1.0})
    mask_rois_per_image: int = 8
    model: ModelConfig = field(default_factory=ModelConfig)
    augmentation: AugmentationConfig | None = field(default_factory=AugmentationConfig)
    inference: InferenceConfig = field(default_factory=InferenceConfig)
    checkpoint_path: str | None = None
    log_path: str | None = None
    checkpoint_interval: int = 0

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.lr < 0:
            raise ValueError("learning rate must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["model"] = self.model.to_dict()
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def settings(self) -> dict:
        """Everything that shapes the trained weights; output locations are left out
        so runs written to different directories produce identical artifacts."""
        d = self.to_dict()
        for key in ("checkpoint_path", "log_path"):
            d.pop(key)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        if "model" in d:
            d["model"] = ModelConfig.from_dict(d["model"])
        if d.get("augmentation") is not None:
            d["augmentation"] = AugmentationConfig(**d["augmentation"])
        if "inference" in d:
            d["inference"] = InferenceConfig(**d["inference"])
        if "loss_weights" in d:
            d["loss_weights"] = {**cls().loss_weights, **d["loss_weights"]}
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "TrainConfig":
        return cls.from_dict(json.loads(text))

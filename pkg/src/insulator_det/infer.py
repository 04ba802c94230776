"""End-to-end inference: backbone -> FPN -> {detector, mask branch}."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch

from .config import InferenceConfig
from .data.records import INSULATOR
from .evaluation import ImagePrediction
from .fcos import decode_detections
from .geometry import Detection
from .model import InsulatorModel
from .sagmask import MaskInstance, paste_mask, roi_align, roi_level


@dataclass
class InferenceResult:
    image_id: str
    height: int
    width: int
    detections: list[Detection]
    masks: list[MaskInstance]

    def to_prediction(self) -> ImagePrediction:
        """Insulator detections carry their masks; defect detections are box-only."""
        by_det = {id(m.detection): m for m in self.masks}
        masks = []
        for d in self.detections:
            m = by_det.get(id(d))
            masks.append(m.binary_mask if m is not None and d.class_id == INSULATOR else None)
        return ImagePrediction(self.image_id, self.height, self.width, list(self.detections), masks)


def _padded(image: np.ndarray, dtype) -> torch.Tensor:
    c, h, w = image.shape
    ph, pw = -(-h // 32) * 32, -(-w // 32) * 32
    out = torch.zeros(1, c, ph, pw, dtype=dtype)
    out[0, :, :h, :w] = torch.as_tensor(image, dtype=dtype)
    return out


def run_detector(model: InsulatorModel, pyramid, image_size: tuple[int, int], icfg: InferenceConfig) -> list[Detection]:
    outputs = model.detect(pyramid).image(0)
    return decode_detections(outputs, image_size, icfg.score_thresh, icfg.pre_nms_topk, icfg.nms_thresh,
                             icfg.max_dets)


def run_mask_branch(model: InsulatorModel, pyramid, detections: Sequence[Detection], image_size: tuple[int, int],
                    icfg: InferenceConfig) -> list[MaskInstance]:
    """Mask logits and pasted binary masks for every detection with positive area."""
    height, width = image_size
    strides = dict(zip(model.levels, model.strides))
    levels = model.mask_levels
    out = []
    for det in detections:
        if det.box.area <= 0:
            continue
        lvl = roi_level(det.box, height * width, levels[0], levels[-1])
        box_t = torch.tensor([det.box.as_tuple()], dtype=torch.float64)
        feat = roi_align(pyramid[lvl][0], box_t, model.cfg.roi_size, strides[lvl], strides[lvl] // 2)
        logits = model.mask_head(feat)[0, det.class_id]
        binary = paste_mask(logits, det.box, height, width, icfg.mask_thresh)
        out.append(MaskInstance(det, logits.detach(), binary))
    return out


@torch.no_grad()
def infer_image(model: InsulatorModel, image: np.ndarray, icfg: InferenceConfig | None = None,
                image_id: str = "image", with_masks: bool = True) -> InferenceResult:
    icfg = icfg or InferenceConfig()
    model.eval()
    dtype = next(model.parameters()).dtype
    _, h, w = image.shape
    pyramid = model.pyramid(_padded(image, dtype))
    dets = run_detector(model, pyramid, (h, w), icfg)
    masks = run_mask_branch(model, pyramid, dets, (h, w), icfg) if with_masks else []
    return InferenceResult(image_id, h, w, dets, masks)


def infer(model: InsulatorModel, images: Sequence[tuple[str, np.ndarray]], icfg: InferenceConfig | None = None,
          with_masks: bool = True) -> list[InferenceResult]:
    return [infer_image(model, img, icfg, image_id, with_masks) for image_id, img in images]

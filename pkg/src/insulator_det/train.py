"""SGD training over detection and mask losses with a per-iteration CSV loss log."""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from .checkpoint import save_checkpoint
from .config import TrainConfig
from .data.augment import (
    hflip_record,
    multi_scale_resize,
    pad_to_multiple,
    scale_brightness,
    shift_range,
    translate_record,
    vflip_record,
)
from .data.records import INSULATOR, DatasetRecord
from .data.rng import Xoshiro256, derive_seed
from .fcos import assign_targets, detection_losses, level_ranges
from .geometry import Box, box_iou_tensor, decode_boxes_tensor
from .model import InsulatorModel, build_model
from .sagmask import mask_loss, mask_targets, roi_align, roi_level

log = logging.getLogger(__name__)

LOG_COLUMNS = ("iter", "cls", "reg", "ctr", "mask", "total")
LOSS_NAMES = ("cls", "reg", "ctr", "mask")


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainResult:
    model: InsulatorModel
    log_rows: list[tuple] = field(default_factory=list)

    def log_text(self) -> str:
        return format_log(self.log_rows)


def format_log(rows: Sequence[tuple]) -> str:
    lines = [",".join(LOG_COLUMNS)]
    for it, *vals in rows:
        lines.append(",".join([str(it)] + [f"{v:.10g}" for v in vals]))
    return "\n".join(lines) + "\n"


def _atomic_write_text(path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def batch_tensor(records: Sequence[DatasetRecord], dtype=torch.float32) -> torch.Tensor:
    """Stack images, zero-padding every one to the batch's largest (32-aligned) size."""
    h = max(-(-r.height // 32) * 32 for r in records)
    w = max(-(-r.width // 32) * 32 for r in records)
    out = torch.zeros(len(records), 3, h, w, dtype=dtype)
    for i, r in enumerate(records):
        out[i, :, : r.height, : r.width] = torch.as_tensor(r.image, dtype=dtype)
    return out


class Augmenter:
    """Seeded flips, multi-scale resize, integer shift and brightness jitter.

    The flip/resize outcome is memoized per (image, flips, size); shift and
    brightness are applied fresh on every call.
    """

    def __init__(self, records: Sequence[DatasetRecord], cfg: TrainConfig):
        self.records = list(records)
        self.aug = cfg.augmentation
        self.rng = Xoshiro256(derive_seed(cfg.seed, 1 + (self.aug.seed if self.aug else 0)))
        self._cache: dict = {}

    def __call__(self, idx: int) -> DatasetRecord:
        rec = self.records[idx]
        aug = self.aug
        if aug is None:
            key = (idx, False, False, None)
            if key not in self._cache:
                self._cache[key] = pad_to_multiple(rec)
            return self._cache[key]
        hflip = bool(self.rng.integers(0, 1)) and aug.hflip
        vflip = bool(self.rng.integers(0, 1)) and aug.vflip
        draw = self.rng.random()
        short, long = min(rec.height, rec.width), max(rec.height, rec.width)
        factor = (aug.scale_min + draw * (aug.scale_max - aug.scale_min)) / short
        factor = min(factor, aug.max_long_side / long)
        size = (max(int(round(rec.height * factor)), 1), max(int(round(rec.width * factor)), 1))
        key = (idx, hflip, vflip, size)
        if key not in self._cache:
            base = hflip_record(rec) if hflip else rec
            base = vflip_record(base) if vflip else base
            self._cache[key] = multi_scale_resize(base, aug, draw)
        out = self._cache[key]
        (x_lo, x_hi), (y_lo, y_hi) = shift_range(out, aug.max_shift)
        dx = self.rng.integers(x_lo, x_hi) if x_hi >= x_lo else 0
        dy = self.rng.integers(y_lo, y_hi) if y_hi >= y_lo else 0
        if dx or dy:
            out = translate_record(out, dx, dy)
        return scale_brightness(out, 1.0 + aug.brightness * (2.0 * self.rng.random() - 1.0))


def _mask_rois(record: DatasetRecord, assignment, reg_raw: torch.Tensor, limit: int):
    """GT insulator boxes plus up to ``limit`` detached predicted boxes with IOU >= 0.5 to their GT."""
    gts = [(k, inst) for k, inst in enumerate(record.instances) if inst.class_id == INSULATOR]
    rois = [(inst.box.as_tuple(), k) for k, inst in gts]
    if limit <= 0 or not gts:
        return rois
    pos = (assignment.class_targets == INSULATOR).nonzero(as_tuple=True)[0]
    if pos.numel() == 0:
        return rois
    ltrb = torch.exp(reg_raw[pos].detach().double().clamp(max=20.0)) * assignment.strides[pos, None]
    boxes = decode_boxes_tensor(assignment.points[pos], ltrb)
    gt_idx = assignment.matched_gt[pos]
    gt_boxes = torch.tensor([inst.box.as_tuple() for inst in record.instances], dtype=torch.float64)
    overlap = box_iou_tensor(boxes, gt_boxes)[torch.arange(len(pos)), gt_idx]
    good = (overlap >= 0.5).nonzero(as_tuple=True)[0]
    if good.numel() == 0:
        return rois
    ranked = good[torch.argsort(-overlap[good], stable=True)]
    pick = np.unique(np.linspace(0, ranked.numel() - 1, min(limit, ranked.numel())).round().astype(int))
    for j in ranked[torch.as_tensor(pick)].tolist():
        x0, y0, x1, y1 = boxes[j].tolist()
        x0, y0 = max(x0, 0.0), max(y0, 0.0)
        x1, y1 = min(x1, float(record.width)), min(y1, float(record.height))
        if x1 > x0 and y1 > y0:
            rois.append(((x0, y0, x1, y1), int(gt_idx[j])))
    return rois


def compute_losses(model: InsulatorModel, records: Sequence[DatasetRecord], cfg: TrainConfig,
                   dtype=torch.float32) -> dict[str, torch.Tensor]:
    images = batch_tensor(records, dtype)
    pyramid = model.pyramid(images)
    outputs = model.detect(pyramid)
    ranges = level_ranges(len(outputs.strides))
    assignments = []
    for rec in records:
        classes = [inst.class_id for inst in rec.instances]
        boxes = [inst.box.as_tuple() for inst in rec.instances]
        assignments.append(assign_targets(outputs.shapes, outputs.strides, classes, boxes, ranges))
    losses = detection_losses(outputs, assignments)

    _, _, reg_flat = outputs.flat()
    strides = dict(zip(model.levels, model.strides))
    levels = model.mask_levels
    roi_size = model.cfg.roi_size
    feats, targets, classes = [], [], []
    for n, rec in enumerate(records):
        rois = _mask_rois(rec, assignments[n], reg_flat[n], cfg.mask_rois_per_image)
        by_level: dict[int, list] = {}
        for box, gt in rois:
            lvl = roi_level(Box(*box), rec.height * rec.width, levels[0], levels[-1])
            by_level.setdefault(lvl, []).append((box, gt))
        for lvl in sorted(by_level):
            items = by_level[lvl]
            box_t = torch.tensor([b for b, _ in items], dtype=torch.float64)
            feats.append(roi_align(pyramid[lvl][n], box_t, roi_size, strides[lvl], strides[lvl] // 2))
            for b, gt in items:
                inst = rec.instances[gt]
                targets.append(mask_targets(inst.mask, torch.tensor([b], dtype=torch.float64), 2 * roi_size)[0])
                classes.append(inst.class_id)
    if feats:
        logits = model.mask_head(torch.cat(feats))
        picked = logits[torch.arange(len(classes)), torch.tensor(classes)]
        losses["mask"] = mask_loss(picked, torch.stack(targets))
    else:
        losses["mask"] = images.sum() * 0.0
    return losses


def _batches(n: int, batch_size: int, rng: Xoshiro256):
    if batch_size >= n:
        while True:
            yield list(range(n))
    while True:
        order = list(range(n))
        for i in range(n - 1, 0, -1):
            j = rng.integers(0, i)
            order[i], order[j] = order[j], order[i]
        for s in range(0, n - batch_size + 1, batch_size):
            yield sorted(order[s:s + batch_size])


def train(cfg: TrainConfig, dataset: Sequence[DatasetRecord], model: InsulatorModel | None = None,
          progress: Callable[[int, dict], None] | None = None) -> TrainResult:
    """Run ``cfg.iterations`` SGD steps; deterministic for a given seed and dataset."""
    if not dataset:
        raise ValueError("training dataset is empty")
    torch.manual_seed(cfg.seed)
    if model is None:
        model = build_model(cfg.model, cfg.seed)
    model.train()
    opt = torch.optim.SGD(model.parameters(), lr=cfg.lr, momentum=cfg.momentum, weight_decay=cfg.weight_decay)
    augment = Augmenter(dataset, cfg)
    batches = _batches(len(dataset), cfg.batch_size, Xoshiro256(derive_seed(cfg.seed, 2)))
    rows: list[tuple] = []
    meta = {"train": cfg.settings()}
    for it in range(1, cfg.iterations + 1):
        records = [augment(i) for i in next(batches)]
        losses = compute_losses(model, records, cfg)
        for name in LOSS_NAMES:
            if not torch.isfinite(losses[name]):
                raise TrainingDiverged(f"iteration {it}: {name} loss is {float(losses[name].detach())}")
        total = sum(cfg.loss_weights[k] * losses[k] for k in LOSS_NAMES)
        scale = min(1.0, it / cfg.warmup_iters) if cfg.warmup_iters > 0 else 1.0
        for group in opt.param_groups:
            group["lr"] = cfg.lr * scale
        opt.zero_grad(set_to_none=False)
        total.backward()
        if cfg.grad_clip:
            torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
        opt.step()
        row = (it, *(float(losses[k].detach()) for k in LOSS_NAMES), float(total.detach()))
        rows.append(row)
        if progress is not None:
            progress(it, dict(zip(LOG_COLUMNS[1:], row[1:])))
        if cfg.checkpoint_path and cfg.checkpoint_interval and it % cfg.checkpoint_interval == 0:
            save_checkpoint(cfg.checkpoint_path, model, {**meta, "iteration": it})
            if cfg.log_path:
                _atomic_write_text(cfg.log_path, format_log(rows))
        if it == 1 or it % 100 == 0:
            log.info("iter %d total %.4f", it, row[-1])
    if cfg.checkpoint_path:
        save_checkpoint(cfg.checkpoint_path, model, {**meta, "iteration": cfg.iterations})
    if cfg.log_path:
        _atomic_write_text(cfg.log_path, format_log(rows))
    model.eval()
    return TrainResult(model, rows)


"""COCO-style AP/AR for the mask task (insulators) and the box task (defects).

Matching follows the COCO protocol: per image, detections (score order,
capped at ``max_dets``) greedily take the unmatched GT with the highest IOU at
or above the threshold, preferring GTs inside the area bucket over ignored
ones; ties go to the lower GT index. Detections matched to ignored GTs, and
unmatched detections whose own area is outside the bucket, are dropped.
Precision is 101-point interpolated.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .data.records import CLASS_NAMES, DEFECT, INSULATOR, DatasetRecord
from .geometry import Box, Detection, iou

IOU_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))
RECALL_POINTS = np.linspace(0.0, 1.0, 101)
NO_GT = -1.0


def in_bucket(area: float, bucket: str) -> bool:
    if bucket == "all":
        return True
    if bucket == "small":
        return area < 32 ** 2
    if bucket == "medium":
        return 32 ** 2 <= area <= 96 ** 2
    if bucket == "large":
        return area > 96 ** 2
    raise ValueError(f"unknown area bucket {bucket!r}")


@dataclass(frozen=True)
class MetricSpec:
    iou_thresholds: tuple[float, ...]
    area_bucket: str
    max_dets: int
    kind: str  # "AP" or "AR"


ROWS: dict[str, MetricSpec] = {
    "AP": MetricSpec(IOU_THRESHOLDS, "all", 100, "AP"),
    "AP50": MetricSpec((0.5,), "all", 100, "AP"),
    "AP75": MetricSpec((0.75,), "all", 100, "AP"),
    "AP_s": MetricSpec(IOU_THRESHOLDS, "small", 100, "AP"),
    "AP_m": MetricSpec(IOU_THRESHOLDS, "medium", 100, "AP"),
    "AP_l": MetricSpec(IOU_THRESHOLDS, "large", 100, "AP"),
    "AR_m1": MetricSpec(IOU_THRESHOLDS, "all", 1, "AR"),
    "AR_m10": MetricSpec(IOU_THRESHOLDS, "all", 10, "AR"),
    "AR_m100": MetricSpec(IOU_THRESHOLDS, "all", 100, "AR"),
    "AR_s": MetricSpec(IOU_THRESHOLDS, "small", 100, "AR"),
    "AR_m": MetricSpec(IOU_THRESHOLDS, "medium", 100, "AR"),
    "AR_l": MetricSpec(IOU_THRESHOLDS, "large", 100, "AR"),
}


def mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    if a.shape != b.shape:
        raise ValueError(f"mask shapes differ: {a.shape} vs {b.shape}")
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 0.0
    return float(np.logical_and(a, b).sum() / union)


def mask_iou_matrix(dets: Sequence[np.ndarray], gts: Sequence[np.ndarray]) -> np.ndarray:
    if not dets or not gts:
        return np.zeros((len(dets), len(gts)))
    d = np.stack([m.reshape(-1) for m in dets]).astype(np.int64)
    g = np.stack([m.reshape(-1) for m in gts]).astype(np.int64)
    inter = d @ g.T
    union = d.sum(1)[:, None] + g.sum(1)[None, :] - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(union > 0, inter / np.maximum(union, 1), 0.0)


def box_iou_matrix(dets: Sequence[Box], gts: Sequence[Box]) -> np.ndarray:
    return np.array([[iou(d, g) for g in gts] for d in dets]).reshape(len(dets), len(gts))


@dataclass
class MatchResult:
    det_gt: list[int]        # matched GT index or -1, per considered detection
    det_ignored: list[bool]
    gt_matched: list[bool]

    @property
    def tp(self) -> list[bool]:
        return [g >= 0 for g in self.det_gt]


def match_from_ious(ious: np.ndarray, iou_thresh: float, gt_ignore: Sequence[bool] | None = None,
                    det_outside: Sequence[bool] | None = None) -> MatchResult:
    """Greedy matching of score-ordered detections (rows) to GTs (columns)."""
    n_det, n_gt = ious.shape
    gt_ignore = list(gt_ignore) if gt_ignore is not None else [False] * n_gt
    det_outside = list(det_outside) if det_outside is not None else [False] * n_det
    gt_matched = [False] * n_gt
    det_gt = [-1] * n_det
    det_ignored = [False] * n_det
    for d in range(n_det):
        best = -1
        for want_ignored in (False, True):
            best_iou = iou_thresh
            for g in range(n_gt):
                if gt_matched[g] or gt_ignore[g] != want_ignored:
                    continue
                v = ious[d, g]
                if v >= best_iou and (best < 0 or v > best_iou):
                    best, best_iou = g, v
            if best >= 0:
                break
        if best >= 0:
            gt_matched[best] = True
            det_gt[d] = best
            det_ignored[d] = gt_ignore[best]
        else:
            det_ignored[d] = det_outside[d]
    return MatchResult(det_gt, det_ignored, gt_matched)


def match_detections(dets: Sequence, gts: Sequence, iou_fn: Callable, iou_thresh: float,
                     max_dets: int = 100) -> MatchResult:
    """Match score-sorted ``dets`` against ``gts`` (same class) with ``iou_fn``."""
    dets = list(dets)[:max_dets]
    ious = np.array([[iou_fn(d, g) for g in gts] for d in dets]).reshape(len(dets), len(gts))
    return match_from_ious(ious, iou_thresh)


def average_precision(flags: Sequence[bool], n_gt: int) -> float:
    """101-point interpolated AP of score-ordered TP flags against ``n_gt`` GTs."""
    if n_gt == 0:
        return NO_GT
    flags = np.asarray(flags, dtype=bool)
    if flags.size == 0:
        return 0.0
    tp = np.cumsum(flags)
    fp = np.cumsum(~flags)
    recall = tp / n_gt
    precision = tp / (tp + fp)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, RECALL_POINTS, side="left")
    q = np.where(idx < len(envelope), envelope[np.minimum(idx, len(envelope) - 1)], 0.0)
    return float(q.mean())


def average_recall(matched_per_threshold: Sequence[int], n_gt: int) -> float:
    """Mean over IOU thresholds of ``matched / n_gt``."""
    if n_gt == 0:
        return NO_GT
    return float(np.mean([m / n_gt for m in matched_per_threshold]))


@dataclass
class TaskImage:
    """One image's detections and GTs for a single task/class."""

    image_id: str
    scores: list[float]
    ious: np.ndarray              # detections (given order) x GTs
    det_areas: list[float]
    gt_areas: list[float]


def _accumulate(images: Sequence[TaskImage], spec: MetricSpec) -> float:
    images = sorted(images, key=lambda im: im.image_id)
    per_thresh = []
    n_gt = sum(in_bucket(a, spec.area_bucket) for im in images for a in im.gt_areas)
    if n_gt == 0:
        return NO_GT
    for t in spec.iou_thresholds:
        scored = []  # (score, tp)
        matched = 0
        for im in images:
            order = np.argsort(-np.asarray(im.scores, dtype=np.float64), kind="stable")[: spec.max_dets]
            gt_ignore = [not in_bucket(a, spec.area_bucket) for a in im.gt_areas]
            det_outside = [not in_bucket(im.det_areas[i], spec.area_bucket) for i in order]
            res = match_from_ious(im.ious[order], t, gt_ignore, det_outside)
            for k, i in enumerate(order):
                if not res.det_ignored[k]:
                    scored.append((im.scores[i], res.det_gt[k] >= 0))
            matched += sum(m and not ig for m, ig in zip(res.gt_matched, gt_ignore))
        if spec.kind == "AR":
            per_thresh.append(matched / n_gt)
        else:
            ranked = sorted(range(len(scored)), key=lambda j: -scored[j][0])
            per_thresh.append(average_precision([scored[j][1] for j in ranked], n_gt))
    return float(np.mean(per_thresh))


def evaluate_task(images: Sequence[TaskImage]) -> dict[str, float]:
    return {name: _accumulate(images, spec) for name, spec in ROWS.items()}


# ---------------------------------------------------------------------------
# prediction records and the two-task table


@dataclass
class ImagePrediction:
    image_id: str
    height: int
    width: int
    detections: list[Detection]
    masks: list[np.ndarray | None] = field(default_factory=list)

    def mask_for(self, i: int) -> np.ndarray | None:
        return self.masks[i] if i < len(self.masks) else None


def mask_task_images(predictions: Sequence[ImagePrediction], records: Sequence[DatasetRecord],
                     class_id: int = INSULATOR) -> list[TaskImage]:
    preds = {p.image_id: p for p in predictions}
    out = []
    for rec in records:
        gts = [inst.mask for inst in rec.instances if inst.class_id == class_id]
        p = preds.get(rec.image_id)
        det_masks, scores = [], []
        if p is not None:
            for i, d in enumerate(p.detections):
                if d.class_id != class_id:
                    continue
                m = p.mask_for(i)
                if m is None:
                    m = np.zeros((rec.height, rec.width), dtype=bool)
                det_masks.append(m)
                scores.append(d.score)
        out.append(TaskImage(rec.image_id, scores, mask_iou_matrix(det_masks, gts),
                             [float(m.sum()) for m in det_masks], [float(m.sum()) for m in gts]))
    return out


def box_task_images(predictions: Sequence[ImagePrediction], records: Sequence[DatasetRecord],
                    class_id: int = DEFECT) -> list[TaskImage]:
    preds = {p.image_id: p for p in predictions}
    out = []
    for rec in records:
        gts = rec.boxes(class_id)
        p = preds.get(rec.image_id)
        dets = [d for d in p.detections if d.class_id == class_id] if p is not None else []
        out.append(TaskImage(rec.image_id, [d.score for d in dets], box_iou_matrix([d.box for d in dets], gts),
                             [d.box.area for d in dets], [g.area for g in gts]))
    return out


@dataclass
class MetricTable:
    """Rows of :data:`ROWS`; ``value1`` is the insulator mask task, ``value2`` the defect box task."""

    value1: dict[str, float]
    value2: dict[str, float]

    def as_dict(self) -> dict[str, dict[str, float]]:
        return {"value1_mask_insulator": dict(self.value1), "value2_box_defect": dict(self.value2)}

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2, sort_keys=False) + "\n"

    def render(self) -> str:
        header = ("Assessment method", "IOU", "AREA", "MaxDets", "Value1", "Value2")
        rows = []
        for name, spec in ROWS.items():
            iou_txt = "0.50-0.95" if len(spec.iou_thresholds) > 1 else f"{spec.iou_thresholds[0]:.2f}"
            rows.append((name, iou_txt, spec.area_bucket, str(spec.max_dets),
                         f"{self.value1[name]:.3f}", f"{self.value2[name]:.3f}"))
        widths = [max(len(r[i]) for r in rows + [header]) for i in range(len(header))]
        lines = ["  ".join(c.ljust(w) for c, w in zip(header, widths))]
        lines.append("  ".join("-" * w for w in widths))
        lines += ["  ".join(c.ljust(w) for c, w in zip(r, widths)) for r in rows]
        return "\n".join(line.rstrip() for line in lines) + "\n"


def metric_table(predictions: Sequence[ImagePrediction], ground_truth: Sequence[DatasetRecord]) -> MetricTable:
    return MetricTable(
        evaluate_task(mask_task_images(predictions, ground_truth)),
        evaluate_task(box_task_images(predictions, ground_truth)),
    )


def predictions_from_records(records: Sequence[DatasetRecord]) -> list[ImagePrediction]:
    """Ground truth rewritten as perfect-confidence predictions."""
    out = []
    for rec in records:
        dets = [Detection(inst.box, inst.class_id, 1.0, 1.0, 1.0) for inst in rec.instances]
        out.append(ImagePrediction(rec.image_id, rec.height, rec.width, dets, [inst.mask for inst in rec.instances]))
    return out


# ---------------------------------------------------------------------------
# predictions file: row-major RLE, alternating zero/one runs starting with zeros


def rle_encode(mask: np.ndarray) -> dict:
    flat = np.asarray(mask, dtype=bool).reshape(-1)
    change = np.flatnonzero(np.diff(flat.astype(np.int8))) + 1
    bounds = np.concatenate([[0], change, [flat.size]])
    counts = np.diff(bounds).tolist()
    if flat.size and flat[0]:
        counts = [0] + counts
    return {"size": [int(mask.shape[0]), int(mask.shape[1])], "counts": [int(c) for c in counts]}


def rle_decode(rle: dict) -> np.ndarray:
    h, w = rle["size"]
    flat = np.zeros(h * w, dtype=bool)
    pos, value = 0, False
    for c in rle["counts"]:
        if value:
            flat[pos:pos + c] = True
        pos += c
        value = not value
    if pos != h * w:
        raise ValueError(f"RLE covers {pos} pixels, expected {h * w}")
    return flat.reshape(h, w)


def dump_predictions(predictions: Sequence[ImagePrediction]) -> str:
    images = []
    for p in sorted(predictions, key=lambda p: p.image_id):
        dets = []
        for i, d in enumerate(p.detections):
            entry = {
                "class_id": d.class_id,
                "label": CLASS_NAMES[d.class_id],
                "score": d.score,
                "cls_score": d.cls_score,
                "centerness": d.centerness,
                "box": list(d.box.as_tuple()),
            }
            m = p.mask_for(i)
            if m is not None:
                entry["mask"] = rle_encode(m)
            dets.append(entry)
        images.append({"image_id": p.image_id, "height": p.height, "width": p.width, "detections": dets})
    return json.dumps({"images": images}, indent=1) + "\n"


def load_predictions(text: str) -> list[ImagePrediction]:
    doc = json.loads(text)
    out = []
    for im in doc["images"]:
        dets, masks = [], []
        for e in im["detections"]:
            cls_score = e.get("cls_score", e["score"])
            ctr = e.get("centerness", 1.0)
            dets.append(Detection(Box(*e["box"]), int(e["class_id"]), cls_score, ctr, e["score"]))
            masks.append(rle_decode(e["mask"]) if "mask" in e else None)
        out.append(ImagePrediction(im["image_id"], im["height"], im["width"], dets, masks))
    return out

"""Slow, loop-based reference implementations used as test oracles.

Nothing here imports the package's numeric code paths; each function is a
direct transcription of its definition with explicit Python loops.
"""

import math

import numpy as np


def sigmoid(v):
    return 1.0 / (1.0 + math.exp(-v))


def conv2d_loop(x, w, b, pad):
    """``x``: C x H x W, ``w``: O x C x k x k, stride 1, zero padding."""
    c, h, wd = x.shape
    o, _, k, _ = w.shape
    out = np.zeros((o, h + 2 * pad - k + 1, wd + 2 * pad - k + 1))
    for oc in range(o):
        for i in range(out.shape[1]):
            for j in range(out.shape[2]):
                acc = b[oc]
                for ic in range(c):
                    for di in range(k):
                        for dj in range(k):
                            yi, xj = i + di - pad, j + dj - pad
                            if 0 <= yi < h and 0 <= xj < wd:
                                acc += w[oc, ic, di, dj] * x[ic, yi, xj]
                out[oc, i, j] = acc
    return out


def ese_loop(x, w, b):
    c, h, wd = x.shape
    pooled = [sum(x[ch, i, j] for i in range(h) for j in range(wd)) / (h * wd) for ch in range(c)]
    out = np.zeros_like(x)
    for oc in range(c):
        gate = sigmoid(b[oc] + sum(w[oc, ic] * pooled[ic] for ic in range(c)))
        for i in range(h):
            for j in range(wd):
                out[oc, i, j] = x[oc, i, j] * gate
    return out


def spatial_attention_loop(x, w, b, mode="concat"):
    c, h, wd = x.shape
    p_max = np.zeros((h, wd))
    p_avg = np.zeros((h, wd))
    for i in range(h):
        for j in range(wd):
            vals = [x[ch, i, j] for ch in range(c)]
            p_max[i, j] = max(vals)
            p_avg[i, j] = sum(vals) / c
    pooled = np.stack([p_max, p_avg]) if mode == "concat" else (p_max * p_avg)[None]
    att = conv2d_loop(pooled, w, b, 1)
    for i in range(h):
        for j in range(wd):
            att[0, i, j] = sigmoid(att[0, i, j])
    return att


def mask_iou_loop(a, b):
    inter = union = 0
    for i in range(a.shape[0]):
        for j in range(a.shape[1]):
            inter += bool(a[i, j]) and bool(b[i, j])
            union += bool(a[i, j]) or bool(b[i, j])
    return inter / union if union else 0.0


def point_in_polygon(px, py, poly):
    """Even-odd ray cast."""
    inside = False
    n = len(poly)
    for k in range(n):
        x0, y0 = poly[k]
        x1, y1 = poly[(k + 1) % n]
        if (y0 > py) != (y1 > py):
            xc = x0 + (py - y0) * (x1 - x0) / (y1 - y0)
            if px < xc:
                inside = not inside
    return inside


# ---------------------------------------------------------------------------
# naive COCO-style evaluator

THRESHOLDS = [0.5 + 0.05 * i for i in range(10)]
ROW_DEFS = [
    ("AP", "all", 100, "AP", "range"), ("AP50", "all", 100, "AP", 0.5), ("AP75", "all", 100, "AP", 0.75),
    ("AP_s", "small", 100, "AP", "range"), ("AP_m", "medium", 100, "AP", "range"),
    ("AP_l", "large", 100, "AP", "range"),
    ("AR_m1", "all", 1, "AR", "range"), ("AR_m10", "all", 10, "AR", "range"),
    ("AR_m100", "all", 100, "AR", "range"), ("AR_s", "small", 100, "AR", "range"),
    ("AR_m", "medium", 100, "AR", "range"), ("AR_l", "large", 100, "AR", "range"),
]


def _bucket(area, name):
    return {"all": True, "small": area < 1024, "medium": 1024 <= area <= 9216, "large": area > 9216}[name]


def _box_iou(a, b):
    iw = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    ih = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = iw * ih
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union if union > 0 else 0.0


def naive_scene_eval(scene, bucket, max_dets, thresh):
    """``scene``: list of images, each ``{"dets": [(score, region, area)], "gts": [(region, area)], "iou": fn}``.

    Returns (list of (score, image_idx, rank, is_tp) for non-ignored dets, n matched non-ignored GTs, n GTs).
    """
    records = []
    matched_total = 0
    n_gt = 0
    for img_idx, img in enumerate(scene):
        dets = sorted(enumerate(img["dets"]), key=lambda p: (-p[1][0], p[0]))[:max_dets]
        gts = img["gts"]
        ignore = [not _bucket(a, bucket) for _, a in gts]
        n_gt += ignore.count(False)
        taken = [False] * len(gts)
        for rank, (_, (score, region, area)) in enumerate(dets):
            cands = [(ignore[g], -img["iou"](region, gts[g][0]), g) for g in range(len(gts))
                     if not taken[g] and img["iou"](region, gts[g][0]) >= thresh]
            if cands:
                ig, _, g = min(cands)
                taken[g] = True
                if not ig:
                    records.append((score, img_idx, rank, True))
            elif _bucket(area, bucket):
                records.append((score, img_idx, rank, False))
        matched_total += sum(1 for g in range(len(gts)) if taken[g] and not ignore[g])
    return records, matched_total, n_gt


def naive_ap(records, n_gt):
    ranked = sorted(records, key=lambda r: (-r[0], r[1], r[2]))
    tp = fp = 0
    curve = []
    for r in ranked:
        tp += r[3]
        fp += not r[3]
        curve.append((tp / n_gt, tp / (tp + fp)))
    total = 0.0
    for k in range(101):
        level = k / 100
        precisions = [p for rec, p in curve if rec >= level - 1e-12]
        total += max(precisions) if precisions else 0.0
    return total / 101


def naive_task(scene):
    out = {}
    for name, bucket, max_dets, kind, thr in ROW_DEFS:
        thresholds = THRESHOLDS if thr == "range" else [thr]
        vals = []
        n_gt = 0
        for t in thresholds:
            records, matched, n_gt = naive_scene_eval(scene, bucket, max_dets, t)
            if n_gt == 0:
                break
            vals.append(matched / n_gt if kind == "AR" else naive_ap(records, n_gt))
        out[name] = -1.0 if n_gt == 0 else sum(vals) / len(vals)
    return out

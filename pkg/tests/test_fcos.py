import math
import random

import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from insulator_det.fcos import (
    BACKGROUND,
    FCOSHead,
    HeadOutputs,
    assign_targets,
    centerness_loss,
    decode_detections,
    detection_losses,
    focal_cls_loss,
    iou_reg_loss,
    level_ranges,
    ltrb_iou,
)
from insulator_det.geometry import Box, iou, map_location

from roundtrip import perfect_outputs, random_scene


def brute_assign(shapes, strides, classes, boxes, ranges):
    """Per-location loop over every GT box."""
    out = []
    for (h, w), s, (lo, hi) in zip(shapes, strides, ranges):
        for q in range(h):
            for p in range(w):
                x, y = map_location(p, q, s)
                best = None
                for g, (x0, y0, x1, y1) in enumerate(boxes):
                    d = (x - x0, y - y0, x1 - x, y1 - y)
                    if min(d) <= 0 or not lo < max(d) <= hi:
                        continue
                    area = (x1 - x0) * (y1 - y0)
                    if best is None or area < best[0]:
                        best = (area, g, d)
                if best is None:
                    out.append((BACKGROUND, -1, (0, 0, 0, 0)))
                else:
                    out.append((classes[best[1]], best[1], best[2]))
    return out


def test_level_ranges_last_level_unbounded():
    assert level_ranges(2) == [(0.0, 64.0), (64.0, math.inf)]
    assert level_ranges(5)[:4] == [(0, 64), (64, 128), (128, 256), (256, 512)]
    assert level_ranges(5)[4] == (512.0, math.inf)


def test_assign_targets_matches_brute_force():
    rng = random.Random(0)
    strides = (8, 16)
    for _ in range(60):
        shapes = [(8, 8), (4, 4)]
        boxes, classes = [], []
        for _ in range(rng.randint(0, 5)):
            x0, y0 = rng.randint(0, 50), rng.randint(0, 50)
            boxes.append((x0, y0, x0 + rng.randint(1, 80), y0 + rng.randint(1, 80)))
            classes.append(rng.randint(0, 1))
        a = assign_targets(shapes, strides, classes, boxes)
        ref = brute_assign(shapes, strides, classes, boxes, level_ranges(2))
        assert a.class_targets.tolist() == [r[0] for r in ref]
        assert a.matched_gt.tolist() == [r[1] for r in ref]
        assert [tuple(t) for t in a.reg_targets.tolist()] == [tuple(float(v) for v in r[2]) for r in ref]


def test_assign_targets_ambiguity_goes_to_smaller_box():
    big, small = (0, 0, 60, 60), (10, 10, 30, 30)
    a = assign_targets([(8, 8)], [8], [0, 1], [big, small])
    # location (20, 20) is p=q=2 on stride 8
    idx = 2 * 8 + 2
    assert a.matched_gt[idx] == 1 and a.class_targets[idx] == 1


def test_assign_targets_centerness_and_boundary():
    a = assign_targets([(4, 4)], [8], [0], [(4, 4, 20, 28)], use_level_ranges=False)
    # (4, 4) sits on the box corner: not strictly inside
    assert a.class_targets[0] == BACKGROUND
    # (12, 12): ltrb (8, 8, 8, 16)
    idx = 1 * 4 + 1
    assert a.reg_targets[idx].tolist() == [8, 8, 8, 16]
    assert a.centerness_targets[idx].item() == pytest.approx(math.sqrt(0.5))


def test_assign_targets_without_boxes():
    a = assign_targets([(2, 3)], [8], [], [])
    assert (a.class_targets == BACKGROUND).all() and a.points.shape == (6, 2)


def test_focal_loss_frozen_values():
    # one positive location with logit 0: 0.25 * 0.5^2 * ln 2
    loss = focal_cls_loss(torch.zeros(1, 1, dtype=torch.float64), torch.tensor([0]))
    assert loss.item() == pytest.approx(0.25 * 0.25 * math.log(2))
    assert loss.item() == pytest.approx(0.0433217, abs=1e-7)
    # a lone negative: (1 - 0.25) * 0.5^2 * ln 2, normalized by max(0, 1)
    neg = focal_cls_loss(torch.zeros(1, 1, dtype=torch.float64), torch.tensor([BACKGROUND]))
    assert neg.item() == pytest.approx(0.75 * 0.25 * math.log(2))


def test_focal_loss_matches_elementwise_oracle():
    g = torch.Generator().manual_seed(0)
    logits = torch.randn(9, 2, generator=g, dtype=torch.float64) * 3
    targets = torch.tensor([-1, 0, 1, 1, -1, -1, 0, -1, 1])
    total = 0.0
    for i in range(9):
        for k in range(2):
            p = 1 / (1 + math.exp(-logits[i, k].item()))
            y = targets[i].item() == k
            pt, at = (p, 0.25) if y else (1 - p, 0.75)
            total += -at * (1 - pt) ** 2 * math.log(pt)
    assert focal_cls_loss(logits, targets).item() == pytest.approx(total / 5, rel=1e-10)


def test_iou_loss_frozen_value():
    pred = torch.tensor([[3.0, 1.0, 1.0, 1.0]], dtype=torch.float64)
    target = torch.tensor([[1.0, 1.0, 3.0, 1.0]], dtype=torch.float64)
    assert ltrb_iou(pred, target).item() == pytest.approx(1 / 3)
    assert iou_reg_loss(pred, target).item() == pytest.approx(math.log(3))
    assert iou_reg_loss(target, target).item() == pytest.approx(0.0, abs=1e-12)


@settings(max_examples=200)
@given(st.tuples(*[st.floats(0.5, 50)] * 4), st.tuples(*[st.floats(0.5, 50)] * 4))
def test_ltrb_iou_agrees_with_box_iou(p, t):
    got = ltrb_iou(torch.tensor([p], dtype=torch.float64), torch.tensor([t], dtype=torch.float64)).item()
    pb = Box(100 - p[0], 100 - p[1], 100 + p[2], 100 + p[3])
    tb = Box(100 - t[0], 100 - t[1], 100 + t[2], 100 + t[3])
    assert got == pytest.approx(iou(pb, tb), rel=1e-9)


def test_iou_loss_weighting():
    pred = torch.tensor([[1.0, 1, 1, 1], [2.0, 2, 2, 2]], dtype=torch.float64)
    target = torch.tensor([[1.0, 1, 1, 1], [1.0, 1, 1, 1]], dtype=torch.float64)
    w = torch.tensor([1.0, 3.0], dtype=torch.float64)
    assert iou_reg_loss(pred, target, w).item() == pytest.approx(3 * math.log(4) / 4)


def test_centerness_loss_frozen_value():
    assert centerness_loss(torch.zeros(3, dtype=torch.float64),
                           torch.tensor([0.0, 0.5, 1.0], dtype=torch.float64)).item() == pytest.approx(math.log(2))
    assert centerness_loss(torch.zeros(0), torch.zeros(0)).item() == 0.0


def test_head_shapes_and_prior_initialisation():
    from insulator_det.model import init_params

    head = init_params(FCOSHead(4, 2, 2), 0)
    out = head([torch.zeros(1, 4, 8, 8), torch.zeros(1, 4, 4, 4)], [8, 16])
    assert out.shapes == [(8, 8), (4, 4)]
    assert out.cls_logits[0].shape == (1, 2, 8, 8)
    assert out.centerness_logits[1].shape == (1, 1, 4, 4)
    assert out.reg_raw[1].shape == (1, 4, 4, 4)
    # zero input: classification logits equal the prior bias
    prior = -math.log((1 - 0.01) / 0.01)
    torch.testing.assert_close(out.cls_logits[0], torch.full_like(out.cls_logits[0], prior))


def test_detection_losses_on_perfect_outputs_are_small():
    boxes, classes = [(10.0, 10.0, 60.0, 40.0), (70.0, 70.0, 120.0, 126.0)], [0, 1]
    outputs = perfect_outputs((128, 128), boxes, classes)
    batched = HeadOutputs([t[None] for t in outputs.cls_logits], [t[None] for t in outputs.centerness_logits],
                          [t[None] for t in outputs.reg_raw], outputs.strides)
    a = assign_targets(outputs.shapes, outputs.strides, classes, boxes)
    losses = detection_losses(batched, [a])
    assert losses["cls"].item() < 1e-6
    assert losses["reg"].item() < 1e-9
    ctr_t = a.centerness_targets[a.positive]
    ideal = torch.nn.functional.binary_cross_entropy(ctr_t, ctr_t)
    assert losses["ctr"].item() == pytest.approx(ideal.item(), abs=1e-5)


def test_decode_score_is_product():
    cls = torch.full((2, 1, 1), -20.0, dtype=torch.float64)
    cls[1, 0, 0] = math.log(0.9 / 0.1)
    ctr = torch.full((1, 1, 1), math.log(0.8 / 0.2), dtype=torch.float64)
    reg = torch.zeros(4, 1, 1, dtype=torch.float64)
    dets = decode_detections(HeadOutputs([cls], [ctr], [reg], [8]), (32, 32))
    assert len(dets) == 1
    d = dets[0]
    assert d.class_id == 1 and d.score == pytest.approx(0.72)
    assert d.box.as_tuple() == pytest.approx((-4 + 4, -4 + 4, 12, 12))


def test_decode_clips_to_image():
    cls = torch.full((1, 1, 1), 5.0, dtype=torch.float64)
    ctr = torch.full((1, 1, 1), 5.0, dtype=torch.float64)
    reg = torch.full((4, 1, 1), math.log(4.0), dtype=torch.float64)
    (d,) = decode_detections(HeadOutputs([cls], [ctr], [reg], [8]), (20, 30))
    assert d.box.as_tuple() == (0.0, 0.0, 30.0, 20.0)


def test_roundtrip_recovers_gt_boxes():
    rng = random.Random(1)
    for _ in range(100):
        size, boxes, classes = random_scene(rng)
        dets = decode_detections(perfect_outputs(size, boxes, classes), size)
        for b, c in zip(boxes, classes):
            best = max((iou(Box(*b), d.box) for d in dets if d.class_id == c), default=0.0)
            assert best >= 0.99

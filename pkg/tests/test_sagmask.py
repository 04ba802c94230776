import math

import numpy as np
import pytest
import torch

from insulator_det.geometry import Box
from insulator_det.model import init_params
from insulator_det.sagmask import (
    MaskHead,
    apply_attention,
    attention_pool,
    mask_loss,
    mask_targets,
    paste_mask,
    roi_align,
    roi_extract,
    roi_level,
    spatial_attention,
)

from oracles import spatial_attention_loop


@pytest.mark.parametrize("mode", ["concat", "product"])
def test_spatial_attention_matches_loop_oracle(mode):
    rng = np.random.default_rng(0)
    for _ in range(10):
        c = int(rng.integers(1, 5))
        x = rng.normal(size=(c, 4, 5))
        w = rng.normal(size=(1, 2 if mode == "concat" else 1, 3, 3))
        b = rng.normal(size=1)
        got = spatial_attention(torch.tensor(x), torch.tensor(w), torch.tensor(b), mode).numpy()
        np.testing.assert_allclose(got, spatial_attention_loop(x, w, b, mode), rtol=1e-6)


def test_attention_pool_values():
    x = torch.tensor([[[1.0, -2.0]], [[3.0, 4.0]]])
    torch.testing.assert_close(attention_pool(x, "concat"), torch.tensor([[[3.0, 4.0]], [[2.0, 1.0]]]))
    torch.testing.assert_close(attention_pool(x, "product"), torch.tensor([[[6.0, 4.0]]]))
    with pytest.raises(ValueError):
        attention_pool(x, "sum")


def test_apply_attention_broadcasts_and_checks_shape():
    x = torch.randn(3, 4, 4)
    att = torch.rand(1, 4, 4)
    torch.testing.assert_close(apply_attention(att, x), att * x)
    with pytest.raises(ValueError):
        apply_attention(torch.rand(1, 3, 4), x)


def test_roi_align_reproduces_linear_ramp():
    # feature value at column u, row v is 2u + 3v + 1; bilinear sampling is exact on it
    h, w = 6, 8
    v, u = torch.meshgrid(torch.arange(h, dtype=torch.float64), torch.arange(w, dtype=torch.float64), indexing="ij")
    feat = (2 * u + 3 * v + 1)[None]
    stride, offset, size = 8, 4, 4
    box = torch.tensor([[10.0, 12.0, 42.0, 36.0]], dtype=torch.float64)
    out = roi_align(feat, box, size, stride, offset)[0, 0]
    for i in range(size):
        for j in range(size):
            x = 10 + (j + 0.5) / size * 32
            y = 12 + (i + 0.5) / size * 24
            uu, vv = (x - offset) / stride, (y - offset) / stride
            assert out[i, j].item() == pytest.approx(2 * uu + 3 * vv + 1, rel=1e-12)


def test_roi_align_clamps_to_border():
    feat = torch.arange(4, dtype=torch.float64).reshape(1, 2, 2)
    out = roi_align(feat, torch.tensor([[-100.0, -100.0, -90.0, -90.0]]), 2, 1, 0.5)
    assert (out == 0).all()


@pytest.mark.parametrize("area,expected", [(224 * 224, 5), (160 * 160, 5), (150 * 150, 4), (112 * 112, 3), (10 * 10, 3)])
def test_roi_level(area, expected):
    side = math.sqrt(area)
    assert roi_level(Box(0, 0, side, side), 224 * 224, 3, 5) == expected


def test_roi_level_rejects_empty_box():
    with pytest.raises(ValueError):
        roi_level(Box(1, 1, 1, 5), 100, 3, 5)


def test_roi_extract_picks_level_and_shape():
    pyramid = {3: torch.randn(4, 16, 16), 4: torch.randn(4, 8, 8)}
    roi = roi_extract(pyramid, {3: 8, 4: 16}, Box(0, 0, 120, 120), (128, 128), size=7)
    assert roi.level == 4 and roi.features.shape == (4, 7, 7)


def test_mask_head_shapes():
    head = init_params(MaskHead(4, 2, 2), 0)
    assert head(torch.randn(3, 4, 14, 14)).shape == (3, 2, 28, 28)
    prod = MaskHead(4, 2, 1, attention_mode="product")
    assert prod.attention.in_channels == 1


def test_paste_mask_stays_inside_box():
    rng = np.random.default_rng(3)
    for _ in range(200):
        x0, y0 = rng.uniform(-5, 30, size=2)
        box = Box(x0, y0, x0 + rng.uniform(0, 20), y0 + rng.uniform(0, 20))
        logits = torch.tensor(rng.normal(size=(6, 6)) * 3)
        m = paste_mask(logits, box, 32, 40)
        ys, xs = np.nonzero(m)
        assert ((xs + 0.5 >= box.x0) & (xs + 0.5 < box.x1)).all()
        assert ((ys + 0.5 >= box.y0) & (ys + 0.5 < box.y1)).all()


def test_paste_mask_constant_logits():
    box = Box(2.0, 3.0, 10.0, 7.0)
    full = paste_mask(torch.full((4, 4), 5.0), box, 12, 12)
    expected = np.zeros((12, 12), dtype=bool)
    expected[3:7, 2:10] = True
    assert (full == expected).all()
    assert not paste_mask(torch.full((4, 4), -5.0), box, 12, 12).any()
    # threshold is inclusive: logit 0 gives probability exactly 0.5
    assert (paste_mask(torch.zeros(4, 4), box, 12, 12) == expected).all()


def test_mask_targets_roundtrip_rectangle():
    gt = np.zeros((20, 20), dtype=bool)
    gt[4:12, 6:14] = True
    t = mask_targets(gt, torch.tensor([[6.0, 4.0, 14.0, 12.0]]), 8)
    assert t.shape == (1, 8, 8) and (t == 1).all()
    t2 = mask_targets(gt, torch.tensor([[2.0, 4.0, 18.0, 12.0]]), 8)
    assert t2[0, :, :2].sum() == 0 and (t2[0, :, 2:6] == 1).all() and t2[0, :, 6:].sum() == 0


def test_mask_loss_frozen_value():
    assert mask_loss(torch.zeros(2, 3, 3), torch.ones(2, 3, 3)).item() == pytest.approx(math.log(2))
    assert mask_loss(torch.zeros(0, 3, 3), torch.zeros(0, 3, 3)).item() == 0.0

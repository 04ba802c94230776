"""Central finite-difference checks of autograd gradients on micro tensors.

Each suite builds a float64 scalar function of some tensors, then compares
autograd gradients to ``(f(x + h) - f(x - h)) / 2h`` element by element. The
reported error is ``||g_auto - g_fd|| / max(||g_auto||, ||g_fd||)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import torch

from .backbone import OSABlock, VoVNet, ese_gate
from .fcos import FCOSHead, centerness_loss, focal_cls_loss, iou_reg_loss
from .fpn import FPN
from .model import init_params
from .sagmask import MaskHead, mask_loss, roi_align, spatial_attention

EPS = 1e-4
TOLERANCE = 1e-4


def numerical_gradient(fn: Callable[[], torch.Tensor], x: torch.Tensor, eps: float = EPS) -> torch.Tensor:
    grad = torch.zeros_like(x)
    flat = x.data.view(-1)
    g = grad.view(-1)
    with torch.no_grad():
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + eps
            up = fn().item()
            flat[i] = orig - eps
            down = fn().item()
            flat[i] = orig
            g[i] = (up - down) / (2 * eps)
    return grad


def relative_error(a: torch.Tensor, b: torch.Tensor) -> float:
    scale = max(a.norm().item(), b.norm().item())
    if scale == 0:
        return 0.0
    return (a - b).norm().item() / scale


def check_gradients(fn: Callable[[], torch.Tensor], tensors: dict[str, torch.Tensor],
                    eps: float = EPS) -> dict[str, float]:
    """Relative error per named tensor; ``fn`` must close over ``tensors``."""
    for t in tensors.values():
        t.requires_grad_(True)
        t.grad = None
    fn().backward()
    errors = {}
    for name, t in tensors.items():
        auto = t.grad.detach().clone() if t.grad is not None else torch.zeros_like(t)
        errors[name] = relative_error(auto, numerical_gradient(fn, t, eps))
    return errors


def _projection(shape, gen) -> torch.Tensor:
    return torch.randn(shape, generator=gen, dtype=torch.float64)


def _module_tensors(module: torch.nn.Module) -> dict[str, torch.Tensor]:
    return dict(module.named_parameters())


def suite_ese(gen):
    x = torch.randn(1, 4, 5, 5, generator=gen, dtype=torch.float64)
    w = torch.randn(4, 4, generator=gen, dtype=torch.float64)
    b = torch.randn(4, generator=gen, dtype=torch.float64)
    proj = _projection(x.shape, gen)
    return (lambda: (ese_gate(x, w, b) * proj).sum()), {"x": x, "weight": w, "bias": b}


def suite_osa(gen):
    block = init_params(OSABlock(4, 3, 4, 2).double(), int(torch.randint(0, 2**31, (1,), generator=gen)))
    x = torch.randn(1, 4, 6, 6, generator=gen, dtype=torch.float64)
    proj = _projection((1, 4, 6, 6), gen)
    return (lambda: (block(x) * proj).sum()), {"x": x, **_module_tensors(block)}


def suite_backbone_stem(gen):
    net = init_params(VoVNet((4, 4, 4), stem_channels=4, mid_channels=(2, 2, 2)).double(),
                      int(torch.randint(0, 2**31, (1,), generator=gen)))
    image = torch.randn(1, 3, 32, 32, generator=gen, dtype=torch.float64)
    stem = {k: v for k, v in net.named_parameters() if k.startswith("stem")}
    return (lambda: net(image)["C5"].sum()), stem


def suite_fpn(gen):
    fpn = init_params(FPN((3, 4, 5), 3, num_levels=2).double(), int(torch.randint(0, 2**31, (1,), generator=gen)))
    for p in fpn.parameters():
        with torch.no_grad():
            p.add_(0.1 * torch.randn(p.shape, generator=gen, dtype=torch.float64))
    feats = {
        "C3": torch.randn(1, 3, 4, 4, generator=gen, dtype=torch.float64),
        "C4": torch.randn(1, 4, 2, 2, generator=gen, dtype=torch.float64),
        "C5": torch.randn(1, 5, 1, 1, generator=gen, dtype=torch.float64),
    }
    proj = {"P3": _projection((1, 3, 4, 4), gen), "P4": _projection((1, 3, 2, 2), gen)}

    def fn():
        out = fpn(feats)
        return sum((out[k] * proj[k]).sum() for k in proj)

    return fn, {**feats, **_module_tensors(fpn)}


def suite_head(gen):
    head = init_params(FCOSHead(3, 2, 2).double(), int(torch.randint(0, 2**31, (1,), generator=gen)))
    for p in head.parameters():
        with torch.no_grad():
            p.add_(0.1 * torch.randn(p.shape, generator=gen, dtype=torch.float64))
    x = torch.randn(1, 3, 4, 4, generator=gen, dtype=torch.float64)
    pc, pt, pr = (_projection(s, gen) for s in ((1, 2, 4, 4), (1, 1, 4, 4), (1, 4, 4, 4)))

    def fn():
        c, t, r = head.forward_level(x)
        return (c * pc).sum() + (t * pt).sum() + (r * pr).sum()

    return fn, {"x": x, **_module_tensors(head)}


def suite_focal_loss(gen):
    logits = torch.randn(6, 2, generator=gen, dtype=torch.float64) * 2
    targets = torch.tensor([-1, 0, 1, -1, 0, -1])
    return (lambda: focal_cls_loss(logits, targets)), {"cls_logits": logits}


def suite_iou_loss(gen):
    raw = torch.randn(5, 4, generator=gen, dtype=torch.float64) * 0.3
    target = torch.rand(5, 4, generator=gen, dtype=torch.float64) * 3 + 0.5
    weights = torch.rand(5, generator=gen, dtype=torch.float64) + 0.1
    return (lambda: iou_reg_loss(torch.exp(raw) * 2.0, target, weights)), {"reg_raw": raw}


def suite_centerness_loss(gen):
    logits = torch.randn(7, generator=gen, dtype=torch.float64) * 2
    targets = torch.rand(7, generator=gen, dtype=torch.float64)
    return (lambda: centerness_loss(logits, targets)), {"centerness_logits": logits}


def suite_spatial_attention(gen):
    x = torch.randn(1, 3, 5, 5, generator=gen, dtype=torch.float64)
    w = torch.randn(1, 2, 3, 3, generator=gen, dtype=torch.float64)
    b = torch.randn(1, generator=gen, dtype=torch.float64)
    proj = _projection((1, 1, 5, 5), gen)
    return (lambda: (spatial_attention(x, w, b) * proj).sum()), {"x": x, "weight": w, "bias": b}


def suite_roi_align(gen):
    feat = torch.randn(2, 5, 6, generator=gen, dtype=torch.float64)
    boxes = torch.tensor([[3.0, 5.0, 30.0, 27.0], [0.0, 0.0, 44.0, 36.0]], dtype=torch.float64)
    proj = _projection((2, 2, 3, 3), gen)
    return (lambda: (roi_align(feat, boxes, 3, 8, 4) * proj).sum()), {"feature": feat}


def suite_mask_head(gen):
    head = init_params(MaskHead(2, 2, 2).double(), int(torch.randint(0, 2**31, (1,), generator=gen)))
    for p in head.parameters():
        with torch.no_grad():
            p.add_(0.1 * torch.randn(p.shape, generator=gen, dtype=torch.float64))
    roi = torch.randn(1, 2, 4, 4, generator=gen, dtype=torch.float64)
    target = (torch.rand(1, 8, 8, generator=gen) > 0.5).double()
    return (lambda: mask_loss(head(roi)[:, 0], target)), {"roi": roi, **_module_tensors(head)}


SUITES: dict[str, Callable] = {
    "ese": suite_ese,
    "osa": suite_osa,
    "backbone_stem": suite_backbone_stem,
    "fpn": suite_fpn,
    "head_towers": suite_head,
    "focal_loss": suite_focal_loss,
    "iou_loss": suite_iou_loss,
    "centerness_loss": suite_centerness_loss,
    "spatial_attention": suite_spatial_attention,
    "roi_align": suite_roi_align,
    "mask_head": suite_mask_head,
}


@dataclass
class GradResult:
    suite: str
    tensor: str
    error: float

    @property
    def ok(self) -> bool:
        return self.error <= TOLERANCE


def run_suite(name: str, seed: int = 0) -> list[GradResult]:
    gen = torch.Generator().manual_seed(seed)
    fn, tensors = SUITES[name](gen)
    return [GradResult(name, k, v) for k, v in check_gradients(fn, tensors).items()]


def run_all(seed: int = 0, names=None) -> list[GradResult]:
    out = []
    for name in names or SUITES:
        out.extend(run_suite(name, seed))
    return out

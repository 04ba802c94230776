"""Deterministic synthetic insulator scenes and the on-disk dataset layout.

Each scene has 1-3 vertical insulator strings (4-8 elliptical discs joined by
a central bar) on a textured background. Every string is one ``Insulator``
polygon; with probability 1/2 a string carries a dark burn blob on one disc,
annotated as an ``Insulator error`` polygon.

Layout written by :func:`write_dataset`::

    images/<id>.png  annotations/<id>.json  train.txt  val.txt
"""

from __future__ import annotations

import math
import os
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image

from ..geometry import tight_box
from .labelme import parse_labelme, to_labelme
from .raster import polygon_to_mask
from .records import DEFECT, INSULATOR, DatasetRecord, Instance
from .rng import Xoshiro256, derive_seed

ARC_POINTS = 7
BLOB_POINTS = 16
PALETTES = (
    (0.86, 0.86, 0.82),  # porcelain
    (0.62, 0.42, 0.28),  # brown glaze
    (0.55, 0.72, 0.70),  # glass
)


def _bilinear_upsample(grid: np.ndarray, height: int, width: int) -> np.ndarray:
    gh, gw = grid.shape[-2:]
    ys = (np.arange(height) + 0.5) * (gh - 1) / height
    xs = (np.arange(width) + 0.5) * (gw - 1) / width
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]
    y1 = np.minimum(y0 + 1, gh - 1)
    x1 = np.minimum(x0 + 1, gw - 1)
    g = grid
    return ((g[..., y0[:, None], x0[None, :]] * (1 - wx) + g[..., y0[:, None], x1[None, :]] * wx) * (1 - wy)
            + (g[..., y1[:, None], x0[None, :]] * (1 - wx) + g[..., y1[:, None], x1[None, :]] * wx) * wy)


def _background(rng: Xoshiro256, height: int, width: int) -> np.ndarray:
    base = np.array([0.25 + 0.35 * rng.random(), 0.30 + 0.35 * rng.random(), 0.25 + 0.40 * rng.random()])
    coarse = rng.uniform_array((3, 6, 6)) - 0.5
    fine = rng.uniform_array((3, height, width)) - 0.5
    img = base[:, None, None] + 0.35 * _bilinear_upsample(coarse, height, width) + 0.10 * fine
    # a few straight structural members (frames, wires)
    for _ in range(rng.integers(0, 3)):
        shade = 0.15 + 0.5 * rng.random()
        thick = rng.integers(1, 3)
        if rng.integers(0, 1):
            y = rng.integers(0, height - thick)
            img[:, y:y + thick, :] = shade
        else:
            x = rng.integers(0, width - thick)
            img[:, :, x:x + thick] = shade
    return img


def _round(v: float) -> float:
    return round(v, 2)


def insulator_polygon(cx: int, top: int, n_discs: int, a: int, b: int, gap: int, bar: int, cap: int):
    """Outline of ``n_discs`` ellipses (semi-axes ``a`` x ``b``) stacked on a bar of half-width ``bar``.

    Returns the polygon and the disc centre rows.
    """
    pitch = 2 * b + gap
    centres = [top + cap + b + k * pitch for k in range(n_discs)]
    # half-angle where the ellipse edge meets the bar
    phi = math.asin(min(bar / a, 1.0))
    right = [(cx + bar, centres[0] - b - cap)]
    for yc in centres:
        for i in range(ARC_POINTS):
            t = -math.pi / 2 + phi + (math.pi - 2 * phi) * i / (ARC_POINTS - 1)
            right.append((cx + a * math.cos(t), yc + b * math.sin(t)))
    right.append((cx + bar, centres[-1] + b + cap))
    left = [(2 * cx - x, y) for x, y in reversed(right)]
    poly = [(_round(x), _round(y)) for x, y in right + left]
    return poly, centres


def _blob_polygon(cx: float, cy: float, radius: float):
    return [(_round(cx + radius * math.cos(2 * math.pi * i / BLOB_POINTS)),
             _round(cy + radius * math.sin(2 * math.pi * i / BLOB_POINTS))) for i in range(BLOB_POINTS)]


def _paint_string(img: np.ndarray, mask: np.ndarray, cx: int, centres: Sequence[int], a: int, b: int,
                  color: np.ndarray, rng: Xoshiro256):
    h, w = mask.shape
    xs = np.arange(w) + 0.5
    ys = np.arange(h) + 0.5
    shade = 0.75 + 0.35 * np.cos(np.clip((xs - cx) / (a + 1), -1.5, 1.5))
    body = color[:, None, None] * shade[None, None, :] * np.ones((1, h, 1))
    body *= 0.93 + 0.07 * rng.random()
    for yc in centres:
        ell = ((xs[None, :] - cx) / a) ** 2 + ((ys[:, None] - yc) / b) ** 2
        rim = (ell > 0.6) & (ell <= 1.05)
        body[:, rim] *= 0.72
    img[:, mask] = body[:, mask]


def _paint_blob(img: np.ndarray, blob_mask: np.ndarray, rng: Xoshiro256):
    tone = np.array([0.22 + 0.08 * rng.random(), 0.07, 0.04])
    img[:, blob_mask] = tone[:, None]


def _quantize(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(img, 0.0, 1.0) * 255.0) / 255.0


def synth_record(seed: int, index: int, image_size: tuple[int, int] = (128, 128)) -> DatasetRecord:
    height, width = image_size
    rng = Xoshiro256(derive_seed(seed, index))
    unit = min(height, width) / 128.0
    img = _background(rng, height, width)
    n_strings = rng.integers(1, 3)
    slot = width // n_strings
    instances: list[Instance] = []
    defects: list[Instance] = []
    for s in range(n_strings):
        a = rng.integers(max(round(8 * unit), 3), max(round(12 * unit), 3))
        b = rng.integers(max(round(3 * unit), 1), max(round(5 * unit), 1))
        gap = rng.integers(max(round(2 * unit), 1), max(round(3 * unit), 1))
        bar = max(round(2 * unit), 1)
        cap = max(round(4 * unit), 1)
        n_discs = rng.integers(4, 8)
        margin = max(round(4 * unit), 1)
        while n_discs > 1 and 2 * cap + n_discs * (2 * b + gap) + 2 * margin > height:
            n_discs -= 1
        total = 2 * cap + n_discs * (2 * b + gap) - gap
        lo_x = s * slot + a + margin
        hi_x = (s + 1) * slot - a - margin - 1
        cx = rng.integers(lo_x, max(hi_x, lo_x))
        top = rng.integers(margin, max(height - margin - total, margin))
        poly, centres = insulator_polygon(cx, top, n_discs, a, b, gap, bar, cap)
        mask = polygon_to_mask(poly, height, width)
        color = np.array(PALETTES[rng.integers(0, len(PALETTES) - 1)])
        _paint_string(img, mask, cx, centres, a, b, color, rng)
        instances.append(Instance(INSULATOR, poly, tight_box(poly), mask))
        if rng.integers(0, 1):
            disc = rng.integers(0, n_discs - 1)
            radius = rng.integers(max(round(5 * unit), 2), max(round(7 * unit), 2))
            side = 1 if rng.integers(0, 1) else -1
            offset = rng.integers(0, max(a - radius // 2, 0))
            bx, by = cx + side * offset, centres[disc]
            blob = _blob_polygon(bx, by, radius)
            blob = [(min(max(x, 0.0), float(width)), min(max(y, 0.0), float(height))) for x, y in blob]
            blob_mask = polygon_to_mask(blob, height, width)
            _paint_blob(img, blob_mask, rng)
            defects.append(Instance(DEFECT, blob, tight_box(blob), blob_mask))
    image_id = f"synth_{seed}_{index:04d}"
    return DatasetRecord(image_id, height, width, _quantize(img), instances + defects)


def synth_generate(seed: int, n: int, image_size: tuple[int, int] = (128, 128)) -> list[DatasetRecord]:
    if n < 1:
        raise ValueError("n must be >= 1")
    return [synth_record(seed, i, image_size) for i in range(n)]


# ---------------------------------------------------------------------------
# directory layout


def _atomic_write(path: Path, data: bytes):
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def image_to_png(image: np.ndarray) -> bytes:
    import io

    arr = np.round(np.clip(image, 0, 1) * 255).astype(np.uint8).transpose(1, 2, 0)
    buf = io.BytesIO()
    Image.fromarray(arr, "RGB").save(buf, format="PNG")
    return buf.getvalue()


def write_dataset(root, train: Iterable[DatasetRecord], val: Iterable[DatasetRecord] = ()):
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "annotations").mkdir(parents=True, exist_ok=True)
    for split, records in (("train", list(train)), ("val", list(val))):
        for rec in records:
            _atomic_write(root / "images" / f"{rec.image_id}.png", image_to_png(rec.image))
            doc = to_labelme(rec, image_path=f"../images/{rec.image_id}.png")
            _atomic_write(root / "annotations" / f"{rec.image_id}.json", doc.encode())
        _atomic_write(root / f"{split}.txt", "".join(f"{r.image_id}\n" for r in records).encode())


def load_image(path) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"), dtype=np.float64).transpose(2, 0, 1) / 255.0


def load_split(root, split: str = "train") -> list[DatasetRecord]:
    root = Path(root)
    split_file = root / f"{split}.txt"
    ids = [line.strip() for line in split_file.read_text().splitlines() if line.strip()]
    records = []
    for image_id in ids:
        image = load_image(root / "images" / f"{image_id}.png")
        text = (root / "annotations" / f"{image_id}.json").read_text()
        records.append(parse_labelme(text, image=image, image_id=image_id))
    return records

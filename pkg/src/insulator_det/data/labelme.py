"""Labelme JSON reading and writing.

Only ``polygon`` (and ``rectangle``, converted to its four corners) shapes
are accepted; labels must be exactly one of :data:`CLASS_NAMES`.
"""

from __future__ import annotations

import base64
import io
import json
from pathlib import PurePosixPath

import numpy as np
from PIL import Image

from ..geometry import tight_box
from .raster import polygon_to_mask
from .records import CLASS_NAMES, AnnotationError, DatasetRecord, Instance, class_id_for

LABELME_VERSION = "5.2.1"


def _decode_json(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        lines = text.splitlines()
        context = lines[e.lineno - 1] if 0 < e.lineno <= len(lines) else ""
        raise AnnotationError(
            f"malformed Labelme JSON at line {e.lineno}, column {e.colno}: {e.msg}: {context.strip()!r}"
        ) from None


def _clip(points, width: int, height: int) -> list[tuple[float, float]]:
    return [(min(max(float(x), 0.0), float(width)), min(max(float(y), 0.0), float(height))) for x, y in points]


def decode_image_data(data: str) -> np.ndarray:
    img = Image.open(io.BytesIO(base64.b64decode(data))).convert("RGB")
    return np.asarray(img, dtype=np.float64).transpose(2, 0, 1) / 255.0


def parse_labelme(text: str, image: np.ndarray | None = None, image_id: str | None = None) -> DatasetRecord:
    doc = _decode_json(text)
    if not isinstance(doc, dict):
        raise AnnotationError("Labelme document must be a JSON object")
    try:
        height = int(doc["imageHeight"])
        width = int(doc["imageWidth"])
    except (KeyError, TypeError, ValueError):
        raise AnnotationError("Labelme document needs integer imageHeight and imageWidth") from None
    if image_id is None:
        path = doc.get("imagePath") or "image"
        image_id = PurePosixPath(str(path).replace("\\", "/")).stem
    if image is None and doc.get("imageData"):
        image = decode_image_data(doc["imageData"])
    instances = []
    for k, shape in enumerate(doc.get("shapes") or []):
        label = shape.get("label")
        class_id = class_id_for(label)
        kind = shape.get("shape_type") or "polygon"
        points = shape.get("points") or []
        if kind == "rectangle":
            if len(points) != 2:
                raise AnnotationError(f"shape {k}: rectangle needs 2 points, got {len(points)}")
            (xa, ya), (xb, yb) = points
            points = [(xa, ya), (xb, ya), (xb, yb), (xa, yb)]
        elif kind != "polygon":
            raise AnnotationError(f"shape {k} ({label!r}): unsupported shape_type {kind!r}")
        polygon = _clip(points, width, height)
        mask = polygon_to_mask(polygon, height, width)
        instances.append(Instance(class_id, polygon, tight_box(polygon), mask))
    return DatasetRecord(image_id, height, width, image, instances)


def to_labelme(record: DatasetRecord, image_path: str | None = None) -> str:
    """Serialize a record's instances as a Labelme document (no embedded image data)."""
    doc = {
        "version": LABELME_VERSION,
        "flags": {},
        "shapes": [
            {
                "label": CLASS_NAMES[inst.class_id],
                "points": [[x, y] for x, y in inst.polygon],
                "group_id": None,
                "shape_type": "polygon",
                "flags": {},
            }
            for inst in record.instances
        ],
        "imagePath": image_path if image_path is not None else f"{record.image_id}.png",
        "imageData": None,
        "imageHeight": record.height,
        "imageWidth": record.width,
    }
    return json.dumps(doc, indent=2) + "\n"

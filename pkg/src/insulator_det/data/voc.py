"""Pascal-VOC-style XML for detected defect points.

Schema (element order fixed)::

    <annotation>
      <filename>{image_id}.png</filename>
      <size><width>W</width><height>H</height><depth>3</depth></size>
      <object>
        <name>Insulator error</name>
        <score>0.912345</score>
        <bndbox><xmin/><ymin/><xmax/><ymax/></bndbox>
      </object>
      ...
    </annotation>

Box corners are integers: floor for the minima, ceil for the maxima.
"""

from __future__ import annotations

import math
import xml.etree.ElementTree as ET
from typing import Sequence

from ..geometry import Box, Detection
from .records import CLASS_NAMES, AnnotationError, class_id_for


def _sub(parent, tag, text=None):
    el = ET.SubElement(parent, tag)
    if text is not None:
        el.text = str(text)
    return el


def export_voc_xml(image_id: str, detections: Sequence[Detection], image_size: tuple[int, int]) -> str:
    """``image_size`` is ``(height, width)``."""
    height, width = image_size
    root = ET.Element("annotation")
    _sub(root, "filename", f"{image_id}.png")
    size = _sub(root, "size")
    _sub(size, "width", width)
    _sub(size, "height", height)
    _sub(size, "depth", 3)
    for det in detections:
        obj = _sub(root, "object")
        _sub(obj, "name", CLASS_NAMES[det.class_id])
        _sub(obj, "score", f"{det.score:.6f}")
        bb = _sub(obj, "bndbox")
        _sub(bb, "xmin", math.floor(det.box.x0))
        _sub(bb, "ymin", math.floor(det.box.y0))
        _sub(bb, "xmax", math.ceil(det.box.x1))
        _sub(bb, "ymax", math.ceil(det.box.y1))
    ET.indent(root, space="  ")
    return '<?xml version="1.0" encoding="utf-8"?>\n' + ET.tostring(root, encoding="unicode") + "\n"


def _text(el, tag, where):
    child = el.find(tag)
    if child is None or child.text is None:
        raise AnnotationError(f"{where}: missing <{tag}>")
    return child.text.strip()


def parse_voc_xml(text: str) -> list[Detection]:
    try:
        root = ET.fromstring(text.encode("utf-8") if text.lstrip().startswith("<?xml") else text)
    except ET.ParseError as e:
        raise AnnotationError(f"malformed VOC XML: {e}") from None
    if root.tag != "annotation":
        raise AnnotationError(f"expected <annotation> root, got <{root.tag}>")
    dets = []
    for k, obj in enumerate(root.findall("object")):
        where = f"object {k}"
        class_id = class_id_for(_text(obj, "name", where))
        score_el = obj.find("score")
        score = float(score_el.text) if score_el is not None and score_el.text else 1.0
        bb = obj.find("bndbox")
        if bb is None:
            raise AnnotationError(f"{where}: missing <bndbox>")
        try:
            coords = [int(_text(bb, t, where)) for t in ("xmin", "ymin", "xmax", "ymax")]
        except ValueError:
            raise AnnotationError(f"{where}: non-integer <bndbox> coordinate") from None
        dets.append(Detection(Box(*map(float, coords)), class_id, score, 1.0, score))
    return dets

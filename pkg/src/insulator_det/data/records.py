"""Dataset record types and the two annotation class names."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..geometry import Box

CLASS_NAMES = ("Insulator", "Insulator error")
INSULATOR = 0
DEFECT = 1


class AnnotationError(ValueError):
    """Raised for malformed or unsupported annotation documents."""


def class_id_for(label: str) -> int:
    try:
        return CLASS_NAMES.index(label)
    except ValueError:
        raise AnnotationError(f"unknown label {label!r}; expected one of {list(CLASS_NAMES)}") from None


@dataclass
class Instance:
    class_id: int
    polygon: list[tuple[float, float]]
    box: Box
    mask: np.ndarray  # H x W bool

    @property
    def label(self) -> str:
        return CLASS_NAMES[self.class_id]


@dataclass
class DatasetRecord:
    image_id: str
    height: int
    width: int
    image: np.ndarray | None = None  # 3 x H x W float in [0, 1]
    instances: list[Instance] = field(default_factory=list)

    def boxes(self, class_id: int | None = None) -> list[Box]:
        return [i.box for i in self.instances if class_id is None or i.class_id == class_id]

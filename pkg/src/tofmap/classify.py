"""Forest / Patch / Linear / Tree assignment from shape descriptors.

Rule cascade, first match wins, all comparisons strict:

1. width > 20 m and area > 5000 m²  -> Forest
2. area < 500 m²                     -> Tree
3. elongation > 3                    -> Linear
4. otherwise                         -> Patch

``linear_first`` swaps rules 2 and 3.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, replace
from enum import IntEnum

from .errors import DegenerateGeometryError
from .geometry import ShapeDescriptors, shape_descriptors
from .vectorize import PolygonGeom

FOREST_MIN_WIDTH = 20.0  # m
FOREST_MIN_AREA = 5000.0  # m², 0.5 ha
TREE_MAX_AREA = 500.0  # m²
LINEAR_MIN_ELONGATION = 3.0


class TofClass(IntEnum):
    BACKGROUND = 0
    FOREST = 1
    PATCH = 2
    LINEAR = 3
    TREE = 4

    @property
    def label(self) -> str:
        return self.name.capitalize()

    @classmethod
    def parse(cls, value) -> "TofClass":
        if isinstance(value, str):
            return cls[value.upper()]
        return cls(int(value))


WOODY_CLASSES = (TofClass.FOREST, TofClass.PATCH, TofClass.LINEAR, TofClass.TREE)
CLASS_NAMES = [c.label for c in TofClass]


@dataclass(frozen=True)
class TofFeature:
    id: object
    geometry: PolygonGeom
    descriptors: ShapeDescriptors | None = None
    tof_class: TofClass | None = None
    properties: dict | None = None


def classify_feature(d: ShapeDescriptors, linear_first: bool = False) -> TofClass:
    if d.rect_width > FOREST_MIN_WIDTH and d.area > FOREST_MIN_AREA:
        return TofClass.FOREST
    is_tree = d.area < TREE_MAX_AREA
    is_linear = d.elongation > LINEAR_MIN_ELONGATION
    if linear_first:
        if is_linear:
            return TofClass.LINEAR
        if is_tree:
            return TofClass.TREE
    else:
        if is_tree:
            return TofClass.TREE
        if is_linear:
            return TofClass.LINEAR
    return TofClass.PATCH


def classify_layer(features: list[TofFeature], linear_first: bool = False) -> list[TofFeature]:
    """Assign a class to every feature, computing descriptors where missing.

    Order is preserved; re-running on the output changes nothing.
    """
    out = []
    for f in features:
        d = f.descriptors
        if d is None:
            try:
                d = shape_descriptors(f.geometry)
            except DegenerateGeometryError as exc:
                raise DegenerateGeometryError(str(exc), feature_id=f.id) from exc
        out.append(replace(f, descriptors=d, tof_class=classify_feature(d, linear_first)))
    return out


def class_counts(features: list[TofFeature]) -> dict[str, int]:
    counts = Counter(f.tof_class for f in features if f.tof_class is not None)
    return {c.label: counts.get(c, 0) for c in WOODY_CLASSES}

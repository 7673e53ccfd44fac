"""Shape descriptors: area, minimum-area rotated rectangle, width, elongation."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np

from .errors import DegenerateGeometryError
from .vectorize import PolygonGeom


class RotatedRect(NamedTuple):
    length: float
    width: float
    angle: float  # direction of the long side, degrees in [0, 180)

    @property
    def area(self) -> float:
        return self.length * self.width


@dataclass(frozen=True)
class ShapeDescriptors:
    area: float
    rect_length: float
    rect_width: float
    elongation: float
    rect_angle: float

    def to_properties(self) -> dict:
        return {
            "area_m2": self.area,
            "width_m": self.rect_width,
            "length_m": self.rect_length,
            "elongation": self.elongation,
            "rect_angle_deg": self.rect_angle,
        }

    @classmethod
    def from_properties(cls, props: dict) -> "ShapeDescriptors":
        return cls(
            area=float(props["area_m2"]),
            rect_length=float(props["length_m"]),
            rect_width=float(props["width_m"]),
            elongation=float(props["elongation"]),
            rect_angle=float(props.get("rect_angle_deg", 0.0)),
        )

    def as_dict(self) -> dict:
        return asdict(self)


def _cross(o, a, b) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def convex_hull(points) -> np.ndarray:
    """Andrew's monotone chain; counterclockwise, no repeated closing vertex, collinear points dropped."""
    pts = sorted(set(map(tuple, np.asarray(points, dtype=np.float64).reshape(-1, 2).tolist())))
    if len(pts) <= 2:
        return np.asarray(pts, dtype=np.float64).reshape(-1, 2)
    lower: list = []
    for p in pts:
        while len(lower) >= 2 and _cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list = []
    for p in reversed(pts):
        while len(upper) >= 2 and _cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.asarray(lower[:-1] + upper[:-1], dtype=np.float64)


def _rect_from_hull(hull: np.ndarray) -> RotatedRect:
    h = len(hull)
    if h < 3:
        raise DegenerateGeometryError("polygon is degenerate (collinear or fewer than 3 distinct vertices)")

    edges = np.roll(hull, -1, axis=0) - hull
    lengths = np.hypot(edges[:, 0], edges[:, 1])
    u = edges / lengths[:, None]

    def dot(i, d):
        return hull[i % h, 0] * d[0] + hull[i % h, 1] * d[1]

    # Rotating calipers: as the base edge turns counterclockwise, the
    # farthest point along the normal and the extreme points along the edge
    # direction only ever move forward around the hull.
    d0, n0 = u[0], (-u[0][1], u[0][0])
    far = max(range(h), key=lambda i: dot(i, n0))
    right = max(range(h), key=lambda i: dot(i, d0))
    left = min(range(h), key=lambda i: dot(i, d0))

    best = None
    for i in range(h):
        d = u[i]
        n = (-d[1], d[0])
        for _ in range(h):
            if dot(far + 1, n) >= dot(far, n):
                far += 1
            else:
                break
        for _ in range(h):
            if dot(right + 1, d) >= dot(right, d):
                right += 1
            else:
                break
        for _ in range(h):
            if dot(left + 1, d) <= dot(left, d):
                left += 1
            else:
                break
        along = dot(right, d) - dot(left, d)
        across = dot(far, n) - dot(i, n)
        area = along * across
        if best is None or area < best[0]:
            best = (area, along, across, d)

    _, along, across, d = best
    if along >= across:
        length, width, direction = along, across, d
    else:
        length, width, direction = across, along, (-d[1], d[0])
    angle = math.degrees(math.atan2(direction[1], direction[0])) % 180.0
    if math.isclose(angle, 180.0, abs_tol=1e-9):
        angle = 0.0
    return RotatedRect(float(length), float(width), float(angle))


def min_rotated_rect(poly: PolygonGeom | np.ndarray) -> RotatedRect:
    """Smallest-area enclosing rectangle of the polygon's exterior.

    One rectangle side is always flush with a convex hull edge, so only hull
    edge directions are candidates. Holes do not affect the rectangle.
    """
    ring = poly.exterior if isinstance(poly, PolygonGeom) else np.asarray(poly, dtype=np.float64)
    # local origin keeps hull and projections precise at map-coordinate magnitudes
    pts = ring - ring[0]
    return _rect_from_hull(convex_hull(pts))


def shape_descriptors(poly: PolygonGeom) -> ShapeDescriptors:
    area = poly.area
    rect = min_rotated_rect(poly)
    if not rect.width > 0:
        raise DegenerateGeometryError("enclosing rectangle has zero width")
    if not area > 0:
        raise DegenerateGeometryError(f"polygon area must be positive, got {area}")
    return ShapeDescriptors(area, rect.length, rect.width, rect.length / rect.width, rect.angle)

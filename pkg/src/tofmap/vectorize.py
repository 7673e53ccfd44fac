"""Mask -> polygons: connected components, boundary tracing, Douglas-Peucker.

Tracing is pixel-exact: rings run along pixel edges and keep every pixel
corner they pass, so a traced polygon's area is exactly
``pixel_count * pixel_area``. Foreground is 8-connected; where two
foreground pixels touch only at a corner the tracer turns so that both stay
in the same ring.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import ParameterError
from .raster import BinaryMask, GeoTransform

logger = logging.getLogger(__name__)

DEFAULT_DP_TOLERANCE = 0.4  # meters, 2 pixels at 0.2 m
DEFAULT_MIN_HOLE_AREA = 1.0  # m²

_EIGHT = np.ones((3, 3), dtype=bool)


def ring_signed_area(ring: np.ndarray) -> float:
    """Shoelace area of a closed ring; positive when counterclockwise."""
    # shift to a local origin; raw UTM products would swamp small areas
    x = ring[:, 0] - ring[0, 0]
    y = ring[:, 1] - ring[0, 1]
    return 0.5 * float(np.dot(x[:-1], y[1:]) - np.dot(x[1:], y[:-1]))


def _close(ring) -> np.ndarray:
    ring = np.asarray(ring, dtype=np.float64).reshape(-1, 2)
    if len(ring) and not np.array_equal(ring[0], ring[-1]):
        ring = np.vstack([ring, ring[:1]])
    return ring


@dataclass
class PolygonGeom:
    """Polygon in map coordinates.

    Rings are closed ``(n, 2)`` arrays (first vertex repeated at the end).
    The exterior is counterclockwise, holes are clockwise.
    """

    exterior: np.ndarray
    holes: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        self.exterior = _close(self.exterior)
        self.holes = [_close(h) for h in self.holes]

    @property
    def area(self) -> float:
        return abs(ring_signed_area(self.exterior)) - sum(abs(ring_signed_area(h)) for h in self.holes)

    @property
    def perimeter(self) -> float:
        return sum(float(np.hypot(*np.diff(r, axis=0).T).sum()) for r in self.rings())

    def rings(self) -> list[np.ndarray]:
        return [self.exterior, *self.holes]

    def n_vertices(self) -> int:
        return sum(len(r) - 1 for r in self.rings())

    def oriented(self) -> "PolygonGeom":
        """Copy with exterior counterclockwise and holes clockwise."""
        ext = self.exterior if ring_signed_area(self.exterior) >= 0 else self.exterior[::-1]
        holes = [h if ring_signed_area(h) <= 0 else h[::-1] for h in self.holes]
        return PolygonGeom(ext.copy(), [h.copy() for h in holes])

    def to_coords(self) -> list:
        return [r.tolist() for r in self.rings()]

    @classmethod
    def from_coords(cls, coords) -> "PolygonGeom":
        rings = [np.asarray(r, dtype=np.float64) for r in coords]
        return cls(rings[0], rings[1:]).oriented()


@dataclass
class Component:
    """One 8-connected foreground region.

    ``pixels`` is the region cropped to its bounding box, whose upper-left
    pixel sits at ``(row0, col0)`` in the source mask.
    """

    label: int
    row0: int
    col0: int
    pixels: np.ndarray

    @property
    def pixel_count(self) -> int:
        return int(self.pixels.sum())

    def coords(self) -> tuple[np.ndarray, np.ndarray]:
        rr, cc = np.nonzero(self.pixels)
        return rr + self.row0, cc + self.col0


def extract_components(mask: BinaryMask | np.ndarray) -> list[Component]:
    """8-connected components ordered by their first pixel in row-major order."""
    bits = mask.bits if isinstance(mask, BinaryMask) else np.asarray(mask, dtype=bool)
    labels, n = ndimage.label(bits, structure=_EIGHT)
    if n == 0:
        return []
    comps = []
    for i, sl in enumerate(ndimage.find_objects(labels), start=1):
        comps.append(Component(i, sl[0].start, sl[1].start, labels[sl] == i))
    # ndimage.label already numbers regions in scan order; sorting keeps that explicit
    comps.sort(key=lambda c: (c.row0, c.col0 + int(np.argmax(c.pixels[0]))))
    return comps


def _trace_rings(pixels: np.ndarray) -> list[np.ndarray]:
    """Closed boundary rings of a boolean array in (col, row) corner coordinates.

    Edges are oriented with foreground on the left when viewed north-up, so
    outer rings come out counterclockwise on the map and holes clockwise.
    """
    p = np.pad(pixels.astype(bool), 1)
    H, W = p.shape
    stride = W + 1  # vertex ids over the (H+1) x (W+1) corner lattice

    fg = p[1:-1, 1:-1]
    rr, cc = np.nonzero(fg)
    rr = rr + 1
    cc = cc + 1

    starts, dirs = [], []
    # (neighbor dr, dc) -> start corner offset (dc, dr), direction (dc, dr)
    sides = (
        ((1, 0), (0, 1), (1, 0)),    # bottom: (c, r+1) -> (c+1, r+1)
        ((0, 1), (1, 1), (0, -1)),   # right:  (c+1, r+1) -> (c+1, r)
        ((-1, 0), (1, 0), (-1, 0)),  # top:    (c+1, r) -> (c, r)
        ((0, -1), (0, 0), (0, 1)),   # left:   (c, r) -> (c, r+1)
    )
    for (ndr, ndc), (oc, orow), (dc, dr) in sides:
        open_side = ~p[rr + ndr, cc + ndc]
        r_, c_ = rr[open_side], cc[open_side]
        starts.append((r_ + orow) * stride + (c_ + oc))
        dirs.append(np.broadcast_to(np.array([dc, dr]), (len(r_), 2)))
    start = np.concatenate(starts)
    d = np.concatenate(dirs)
    end = start + d[:, 1] * stride + d[:, 0]

    order = np.argsort(start, kind="stable")
    start, end, d = start[order], end[order], d[order]
    n = len(start)

    # outgoing edges per vertex: one, or two at corner-touching pinch points
    first = np.searchsorted(start, end, side="left")
    last = np.searchsorted(start, end, side="right")
    nxt = first.copy()
    pinch = np.nonzero(last - first == 2)[0]
    if len(pinch):
        a = first[pinch]
        # turn right on the map (positive cross product in row-down grid coords)
        cross = d[pinch, 0] * d[a, 1] - d[pinch, 1] * d[a, 0]
        nxt[pinch] = np.where(cross > 0, a, a + 1)

    visited = np.zeros(n, dtype=bool)
    rings = []
    for e0 in range(n):
        if visited[e0]:
            continue
        ids = []
        e = e0
        while not visited[e]:
            visited[e] = True
            ids.append(start[e])
            e = nxt[e]
        ids.append(start[e0])
        ids = np.asarray(ids)
        # back to unpadded pixel-corner coordinates
        rings.append(np.column_stack([ids % stride - 1, ids // stride - 1]).astype(np.float64))
    return rings


def polygonize(component: Component, transform: GeoTransform) -> PolygonGeom:
    """Pixel-exact polygon of one component in map coordinates."""
    rings = _trace_rings(component.pixels)
    geo = []
    for ring in rings:
        x, y = transform.pixel_to_map(ring[:, 1] + component.row0, ring[:, 0] + component.col0)
        geo.append(np.column_stack([x, y]))
    areas = [ring_signed_area(r) for r in geo]
    outer = [i for i, a in enumerate(areas) if a > 0]
    if len(outer) != 1:
        raise RuntimeError(f"component {component.label}: expected one outer ring, traced {len(outer)}")
    holes = [r for i, r in enumerate(geo) if areas[i] < 0]
    return PolygonGeom(geo[outer[0]], holes)


def drop_small_holes(poly: PolygonGeom, min_area: float = DEFAULT_MIN_HOLE_AREA) -> PolygonGeom:
    keep = [h for h in poly.holes if abs(ring_signed_area(h)) >= min_area]
    return PolygonGeom(poly.exterior, keep)


# ---------------------------------------------------------------------------
# Douglas-Peucker
# ---------------------------------------------------------------------------


def _segment_distances(pts: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ab = b - a
    denom = float(ab @ ab)
    if denom == 0.0:
        return np.hypot(*(pts - a).T)
    t = np.clip(((pts - a) @ ab) / denom, 0.0, 1.0)
    proj = a + t[:, None] * ab
    return np.hypot(*(pts - proj).T)


def _dp_keep(points: np.ndarray, tolerance: float) -> np.ndarray:
    """Boolean keep-mask over an open polyline; endpoints always kept.

    A vertex survives when it is farther than ``tolerance`` from the
    segment joining the current anchor and floater.
    """
    n = len(points)
    keep = np.zeros(n, dtype=bool)
    keep[0] = keep[-1] = True
    stack = [(0, n - 1)]
    while stack:
        i, j = stack.pop()
        if j - i < 2:
            continue
        dist = _segment_distances(points[i + 1 : j], points[i], points[j])
        k = int(np.argmax(dist))
        if dist[k] > tolerance:
            k += i + 1
            keep[k] = True
            stack.append((i, k))
            stack.append((k, j))
    return keep


def simplify_line(points, tolerance: float) -> np.ndarray:
    points = np.asarray(points, dtype=np.float64)
    if tolerance < 0:
        raise ParameterError(f"tolerance must be >= 0, got {tolerance}")
    if tolerance == 0 or len(points) < 3:
        return points.copy()
    return points[_dp_keep(points, tolerance)]


def simplify_ring(ring: np.ndarray, tolerance: float) -> np.ndarray:
    """Simplify a closed ring by splitting it at its start vertex and the vertex farthest from it.

    Falls back to the input ring when simplification would leave fewer
    than three distinct vertices.
    """
    ring = _close(ring)
    if tolerance < 0:
        raise ParameterError(f"tolerance must be >= 0, got {tolerance}")
    pts = ring[:-1]
    if tolerance == 0 or len(pts) <= 3:
        return ring.copy()
    far = int(np.argmax(np.hypot(*(pts - pts[0]).T)))
    if far == 0:
        return ring.copy()
    first = simplify_line(ring[: far + 1], tolerance)
    second = simplify_line(ring[far:], tolerance)
    out = np.vstack([first, second[1:]])
    if len(out) < 4:
        return ring.copy()
    return out


def simplify_dp(poly: PolygonGeom, tolerance: float = DEFAULT_DP_TOLERANCE) -> PolygonGeom:
    """Douglas-Peucker on every ring independently."""
    if tolerance < 0:
        raise ParameterError(f"tolerance must be >= 0, got {tolerance}")
    return PolygonGeom(
        simplify_ring(poly.exterior, tolerance),
        [simplify_ring(h, tolerance) for h in poly.holes],
    )


# ---------------------------------------------------------------------------
# whole-mask driver
# ---------------------------------------------------------------------------


@dataclass
class VectorFeature:
    """A traced component and its simplified outline."""

    id: int
    pixel_count: int
    traced: PolygonGeom
    geometry: PolygonGeom


def vectorize_mask(
    mask: BinaryMask,
    tolerance: float = DEFAULT_DP_TOLERANCE,
    min_hole_area: float = DEFAULT_MIN_HOLE_AREA,
    workers: int = 1,
) -> list[VectorFeature]:
    """Trace, drop small holes and simplify every component of ``mask``.

    Output order follows :func:`extract_components` regardless of
    ``workers``.
    """
    comps = extract_components(mask)

    def one(comp: Component) -> VectorFeature:
        traced = drop_small_holes(polygonize(comp, mask.transform), min_hole_area)
        return VectorFeature(comp.label, comp.pixel_count, traced, simplify_dp(traced, tolerance))

    if workers > 1 and len(comps) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            feats = list(pool.map(one, comps))
    else:
        feats = [one(c) for c in comps]
    logger.debug("vectorized %d components", len(feats))
    return feats

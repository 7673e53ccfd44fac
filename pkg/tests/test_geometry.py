from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import edge_enumeration_rect, random_convex_polygon, sweep_min_rect_area

from tofmap.errors import DegenerateGeometryError
from tofmap.geometry import convex_hull, min_rotated_rect, shape_descriptors
from tofmap.vectorize import PolygonGeom, extract_components, polygonize
from tofmap.raster import GeoTransform


def _rect(w, h, angle=0.0, offset=(0.0, 0.0)):
    pts = np.array([[0, 0], [w, 0], [w, h], [0, h]], float) - [w / 2, h / 2]
    a = math.radians(angle)
    rot = np.array([[math.cos(a), -math.sin(a)], [math.sin(a), math.cos(a)]])
    return PolygonGeom(pts @ rot.T + offset)


def _rigid(pts, angle, shift):
    a = math.radians(angle)
    rot = np.array([[math.cos(a), -math.sin(a)], [math.sin(a), math.cos(a)]])
    return pts @ rot.T + shift


def test_axis_aligned_rectangle():
    r = min_rotated_rect(_rect(10, 4))
    assert (r.length, r.width, r.angle) == pytest.approx((10, 4, 0), abs=1e-9)


def test_rotated_rectangle_at_map_offset():
    r = min_rotated_rect(_rect(10, 4, 30, (612000.0, 5800000.0)))
    assert (r.length, r.width) == pytest.approx((10, 4), abs=1e-8)
    assert r.angle == pytest.approx(30, abs=1e-6)


def test_angle_is_long_side_direction():
    r = min_rotated_rect(_rect(4, 10))
    assert r.angle == pytest.approx(90, abs=1e-9)
    assert 0 <= min_rotated_rect(_rect(10, 4, 179.5)).angle < 180


def test_degenerate_polygons_raise():
    with pytest.raises(DegenerateGeometryError):
        min_rotated_rect(np.array([[0, 0], [1, 1], [2, 2], [0, 0]], float))
    with pytest.raises(DegenerateGeometryError):
        min_rotated_rect(np.array([[0, 0], [0, 0], [0, 0]], float))


def test_convex_hull_drops_interior_and_collinear():
    pts = [[0, 0], [2, 0], [1, 0], [2, 2], [0, 2], [1, 1]]
    hull = convex_hull(pts)
    assert len(hull) == 4
    x, y = hull[:, 0], hull[:, 1]
    assert 0.5 * np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y) == pytest.approx(4)


def test_strip_descriptors():
    d = shape_descriptors(_rect(100, 5, 17, (500000, 5900000)))
    assert d.area == pytest.approx(500, rel=1e-9)
    assert d.elongation == pytest.approx(20, rel=1e-9)
    assert d.rect_width == pytest.approx(5, rel=1e-9)


def test_square_descriptors():
    d = shape_descriptors(_rect(80, 80))
    assert d.area == pytest.approx(6400)
    assert d.elongation == pytest.approx(1)
    assert d.rect_width == pytest.approx(80)


def test_donut_descriptors_subtract_hole():
    bits = np.ones((3, 3), bool)
    bits[1, 1] = False
    poly = polygonize(extract_components(bits)[0], GeoTransform(0, 0))
    d = shape_descriptors(poly)
    assert d.area == pytest.approx(0.32)
    assert (d.rect_length, d.rect_width) == pytest.approx((0.6, 0.6))


def test_calipers_match_sweep_and_edge_enumeration():
    rng = np.random.default_rng(2024)
    for _ in range(100):
        pts = random_convex_polygon(rng, 20)
        r = min_rotated_rect(np.vstack([pts, pts[:1]]))
        exact, long_, short = edge_enumeration_rect(pts)
        assert r.area == pytest.approx(exact, rel=1e-9)
        assert (r.length, r.width) == pytest.approx((long_, short), rel=1e-9)
        sweep = sweep_min_rect_area(pts, 0.01)
        assert r.area <= sweep * (1 + 1e-12)
        assert abs(r.area - sweep) <= 1e-3 * sweep


@settings(max_examples=60, deadline=None)
@given(
    st.integers(0, 10_000),
    st.floats(0, 360),
    st.floats(-1e6, 1e6),
    st.floats(-1e6, 1e6),
)
def test_rigid_motion_invariance(seed, angle, dx, dy):
    pts = random_convex_polygon(np.random.default_rng(seed), 12)
    a = min_rotated_rect(np.vstack([pts, pts[:1]]))
    moved = _rigid(pts, angle, (dx, dy))
    b = min_rotated_rect(np.vstack([moved, moved[:1]]))
    assert b.length == pytest.approx(a.length, rel=1e-6)
    assert b.width == pytest.approx(a.width, rel=1e-6)
    assert b.length / b.width == pytest.approx(a.length / a.width, rel=1e-6)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.01, 100))
def test_scaling_behaviour(seed, s):
    pts = random_convex_polygon(np.random.default_rng(seed), 12)
    a = shape_descriptors(PolygonGeom(pts))
    b = shape_descriptors(PolygonGeom(pts * s))
    assert b.area == pytest.approx(a.area * s * s, rel=1e-9)
    assert b.rect_width == pytest.approx(a.rect_width * s, rel=1e-9)
    assert b.rect_length == pytest.approx(a.rect_length * s, rel=1e-9)
    assert b.elongation == pytest.approx(a.elongation, rel=1e-9)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000))
def test_descriptor_invariants(seed):
    pts = random_convex_polygon(np.random.default_rng(seed), 16)
    d = shape_descriptors(PolygonGeom(pts))
    assert d.rect_length >= d.rect_width > 0
    assert d.elongation >= 1
    assert 0 < d.area <= d.rect_length * d.rect_width * (1 + 1e-12)

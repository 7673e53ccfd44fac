from __future__ import annotations

import json

import numpy as np
import pytest
from oracles import random_convex_polygon

from tofmap.classify import TofClass, TofFeature, class_counts, classify_feature, classify_layer
from tofmap.errors import DegenerateGeometryError
from tofmap.geojson import read_features, write_features
from tofmap.geometry import ShapeDescriptors, shape_descriptors
from tofmap.vectorize import PolygonGeom


def D(area, width, elongation):
    return ShapeDescriptors(area, width * elongation, width, elongation, 0.0)


@pytest.mark.parametrize(
    "d,expected",
    [
        (D(6400, 80, 1), TofClass.FOREST),
        (D(78.5, 10, 1), TofClass.TREE),
        (D(540, 6, 15), TofClass.LINEAR),
        (D(1200, 30, 1.33), TofClass.PATCH),
        (D(5000, 25, 8), TofClass.LINEAR),
        (D(5000, 25, 2), TofClass.PATCH),
    ],
)
def test_cascade_examples(d, expected):
    assert classify_feature(d) == expected


def test_linear_first_flag():
    shrub = D(300, 3, 10)
    assert classify_feature(shrub) == TofClass.TREE
    assert classify_feature(shrub, linear_first=True) == TofClass.LINEAR
    assert classify_feature(D(6400, 80, 1), linear_first=True) == TofClass.FOREST


def test_class_codes_and_names():
    assert [int(c) for c in TofClass] == [0, 1, 2, 3, 4]
    assert TofClass.LINEAR.label == "Linear"
    assert TofClass.parse("tree") == TofClass.TREE and TofClass.parse(2) == TofClass.PATCH


def _square(side, x0=0.0, y0=0.0):
    return PolygonGeom(np.array([[x0, y0], [x0 + side, y0], [x0 + side, y0 + side], [x0, y0 + side]]))


def test_classify_layer_preserves_order_and_is_idempotent():
    feats = [TofFeature(i, _square(s)) for i, s in enumerate([80, 5, 30])]
    once = classify_layer(feats)
    assert [f.id for f in once] == [0, 1, 2]
    assert [f.tof_class for f in once] == [TofClass.FOREST, TofClass.TREE, TofClass.PATCH]
    assert classify_layer(once) == once
    assert class_counts(once) == {"Forest": 1, "Patch": 1, "Linear": 0, "Tree": 1}
    assert classify_layer([]) == []


def test_classify_layer_attaches_feature_id_to_errors():
    bad = TofFeature("f-7", PolygonGeom(np.array([[0, 0], [1, 1], [2, 2]], float)))
    with pytest.raises(DegenerateGeometryError) as exc:
        classify_layer([bad])
    assert exc.value.feature_id == "f-7"


def test_unreachable_patch_branch_over_random_polygons():
    """Patch never sees area > 5000 m² (width <= 20 and elongation <= 3 cap area at 1200 m²)."""
    rng = np.random.default_rng(77)
    seen = {c: 0 for c in TofClass}
    for _ in range(10_000):
        pts = random_convex_polygon(rng, int(rng.integers(3, 12)), scale=10 ** rng.uniform(-0.5, 1.5))
        d = shape_descriptors(PolygonGeom(pts))
        cls = classify_feature(d)
        seen[cls] += 1
        if d.area > 5000 and d.rect_width <= 20:
            assert d.elongation > 3
        if cls == TofClass.PATCH:
            assert d.area <= 1200 * (1 + 1e-9) or d.rect_width > 20
            assert not (d.area > 5000 and d.elongation <= 3 and d.rect_width <= 20)
    assert all(seen[c] > 0 for c in (TofClass.FOREST, TofClass.PATCH, TofClass.LINEAR, TofClass.TREE))


def test_rigid_motion_never_changes_class():
    rng = np.random.default_rng(8)
    for _ in range(200):
        pts = random_convex_polygon(rng, 10, scale=10 ** rng.uniform(0, 1.3))
        a = rng.uniform(0, 2 * np.pi)
        rot = np.array([[np.cos(a), -np.sin(a)], [np.sin(a), np.cos(a)]])
        moved = pts @ rot.T + rng.uniform(-1e5, 1e5, 2)
        d0, d1 = shape_descriptors(PolygonGeom(pts)), shape_descriptors(PolygonGeom(moved))
        # skip shapes sitting within float noise of a threshold
        near = [abs(d0.area - t) < 1e-6 * t for t in (500, 5000)] + [abs(d0.elongation - 3) < 1e-9]
        if not any(near):
            assert classify_feature(d0) == classify_feature(d1)


def test_geojson_round_trip(tmp_path):
    hole = np.array([[10, 10], [10, 20], [20, 20], [20, 10]], float)
    poly = PolygonGeom(np.array([[0, 0], [40, 0], [40, 30], [0, 30]], float), [hole]).oriented()
    feats = classify_layer([TofFeature(1, poly, properties={"pixel_count": 27500})])
    path = write_features(tmp_path / "tof.geojson", feats, crs="EPSG:25832", name="t")
    fc = json.loads(path.read_text())
    props = fc["features"][0]["properties"]
    assert {"area_m2", "width_m", "length_m", "elongation", "class_code", "class_name"} <= set(props)
    assert props["class_name"] == "Patch" and props["class_code"] == 2
    assert props["area_m2"] == pytest.approx(1100)
    back, crs = read_features(path)
    assert crs == "EPSG:25832"
    assert back[0].descriptors is None and back[0].properties == {"pixel_count": 27500}
    again = classify_layer(back)
    assert again[0].tof_class == feats[0].tof_class
    assert again[0].descriptors == feats[0].descriptors
    kept, _ = read_features(path, keep_descriptors=True)
    assert kept[0].tof_class == TofClass.PATCH


def test_geojson_rejects_non_polygon(tmp_path):
    p = tmp_path / "x.geojson"
    p.write_text(json.dumps({"type": "FeatureCollection", "features": [
        {"type": "Feature", "geometry": {"type": "Point", "coordinates": [0, 0]}, "properties": {}}]}))
    with pytest.raises(ValueError):
        read_features(p)

"""GeoJSON FeatureCollection reading and writing for polygon layers.

Coordinates are written in the rasters' projected map units (meters), not
WGS84; when a CRS is known it is recorded in the legacy ``crs`` member.
"""

from __future__ import annotations

import json
from pathlib import Path

from .classify import TofClass, TofFeature
from .geometry import ShapeDescriptors
from .vectorize import PolygonGeom


def feature_to_dict(f: TofFeature) -> dict:
    props = {"id": f.id}
    if f.properties:
        props.update(f.properties)
    if f.descriptors is not None:
        props.update(f.descriptors.to_properties())
    if f.tof_class is not None:
        props["class_code"] = int(f.tof_class)
        props["class_name"] = f.tof_class.label
    return {
        "type": "Feature",
        "id": f.id,
        "geometry": {"type": "Polygon", "coordinates": f.geometry.to_coords()},
        "properties": props,
    }


def feature_collection(features: list[TofFeature], crs=None, name: str | None = None) -> dict:
    fc: dict = {"type": "FeatureCollection"}
    if name:
        fc["name"] = name
    if crs:
        fc["crs"] = {"type": "name", "properties": {"name": str(crs)}}
    fc["features"] = [feature_to_dict(f) for f in features]
    return fc


def write_features(path: str | Path, features: list[TofFeature], crs=None, name: str | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(feature_collection(features, crs, name), fh, separators=(",", ":"))
    return path


def read_features(path: str | Path, keep_descriptors: bool = False) -> tuple[list[TofFeature], object]:
    """Load a polygon FeatureCollection; returns ``(features, crs)``.

    Stored descriptors and classes are dropped unless ``keep_descriptors``
    is set, so that downstream classification recomputes them from geometry.
    """
    with open(path) as fh:
        fc = json.load(fh)
    if fc.get("type") != "FeatureCollection":
        raise ValueError(f"{path}: not a FeatureCollection")
    crs = (fc.get("crs") or {}).get("properties", {}).get("name")
    out = []
    for i, feat in enumerate(fc.get("features", [])):
        geom = feat.get("geometry") or {}
        if geom.get("type") != "Polygon":
            raise ValueError(f"{path}: feature {i} is {geom.get('type')}, only Polygon is supported")
        props = dict(feat.get("properties") or {})
        fid = feat.get("id", props.get("id", i))
        desc = cls = None
        if keep_descriptors and "area_m2" in props:
            desc = ShapeDescriptors.from_properties(props)
            if "class_code" in props:
                cls = TofClass(int(props["class_code"]))
        extra = {k: v for k, v in props.items() if k in ("pixel_count",)}
        out.append(TofFeature(fid, PolygonGeom.from_coords(geom["coordinates"]), desc, cls, extra or None))
    return out, crs

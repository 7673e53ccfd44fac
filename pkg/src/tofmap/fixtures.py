"""Synthetic desk-scale scenes with analytic ground truth.

A scene is a plain dict (JSON/YAML friendly)::

    {
      "extent": [1000, 1000],          # rows, cols in pixels
      "pixel_size": 0.2,
      "origin": [500000.0, 5900000.0], # map x, y of the upper-left corner
      "background": {"height": 0.0, "ndvi": 0.1},
      "ndvi_noise": 0.0,               # sigma of Gaussian NDVI noise
      "shapes": [
        {"kind": "block", "at": [10, 10], "size": [80, 80], "height": 15, "ndvi": 0.6},
        {"kind": "disk", "center": [150, 150], "radius": 5, "height": 12, "ndvi": 0.6},
        {"kind": "strip", "center": [140, 60], "length": 100, "width": 6, "angle": 30,
         "height": 6, "ndvi": 0.6},
        {"kind": "block", "at": [100, 160], "size": [20, 15], "height": 8, "ndvi": 0.0,
         "woody": false},
      ],
    }

Shape positions are meters from the upper-left corner, x to the right and
y downward. A pixel belongs to a shape when its center does. Woody shapes
get a class from their exact analytic area, width and elongation; later
shapes are painted over earlier ones.
"""

from __future__ import annotations

import copy
import math

import numpy as np

from .classify import TofClass, classify_feature
from .errors import ParameterError
from .geometry import ShapeDescriptors
from .raster import BLUE, GREEN, NIR, RED, GeoTransform, RasterGrid

DEFAULT_ORIGIN = (500000.0, 5900000.0)
DEFAULT_CRS = "EPSG:25832"
NIR_REFLECTANCE = 200  # 8-bit NIR digital number used for every surface

FOUR_SHAPE_SCENE = {
    "extent": [1000, 1000],
    "pixel_size": 0.2,
    "origin": list(DEFAULT_ORIGIN),
    "background": {"height": 0.0, "ndvi": 0.1},
    "ndvi_noise": 0.0,
    "shapes": [
        {"name": "forest", "kind": "block", "at": [10, 10], "size": [80, 80], "height": 18.0, "ndvi": 0.6},
        {"name": "hedgerow", "kind": "strip", "center": [140, 60], "length": 100, "width": 6, "angle": 30,
         "height": 6.0, "ndvi": 0.55},
        {"name": "grove", "kind": "block", "at": [20, 120], "size": [40, 30], "height": 12.0, "ndvi": 0.6},
        {"name": "tree", "kind": "disk", "center": [150, 150], "radius": 5, "height": 10.0, "ndvi": 0.65},
        {"name": "building", "kind": "block", "at": [100, 160], "size": [20, 15], "height": 8.0, "ndvi": 0.0,
         "woody": False},
    ],
}


def four_shape_scene(ndvi_noise: float = 0.0) -> dict:
    scene = copy.deepcopy(FOUR_SHAPE_SCENE)
    scene["ndvi_noise"] = ndvi_noise
    return scene


def _inside(shape: dict, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    kind = shape.get("kind")
    if kind == "block":
        x0, y0 = shape["at"]
        w, h = shape["size"]
        return (x >= x0) & (x < x0 + w) & (y >= y0) & (y < y0 + h)
    if kind == "disk":
        cx, cy = shape["center"]
        return (x - cx) ** 2 + (y - cy) ** 2 <= shape["radius"] ** 2
    if kind == "strip":
        cx, cy = shape["center"]
        a = math.radians(shape.get("angle", 0.0))
        u = (x - cx) * math.cos(a) + (y - cy) * math.sin(a)
        v = -(x - cx) * math.sin(a) + (y - cy) * math.cos(a)
        return (np.abs(u) <= shape["length"] / 2) & (np.abs(v) <= shape["width"] / 2)
    raise ParameterError(f"unknown shape kind {kind!r}")


def _bbox(shape: dict) -> tuple[float, float, float, float]:
    kind = shape["kind"]
    if kind == "block":
        x0, y0 = shape["at"]
        w, h = shape["size"]
        return x0, y0, x0 + w, y0 + h
    cx, cy = shape["center"]
    if kind == "disk":
        r = shape["radius"]
        return cx - r, cy - r, cx + r, cy + r
    a = math.radians(shape.get("angle", 0.0))
    hl, hw = shape["length"] / 2, shape["width"] / 2
    dx = abs(hl * math.cos(a)) + abs(hw * math.sin(a))
    dy = abs(hl * math.sin(a)) + abs(hw * math.cos(a))
    return cx - dx, cy - dy, cx + dx, cy + dy


def analytic_descriptors(shape: dict) -> ShapeDescriptors:
    """Exact area and enclosing-rectangle measures of a parametric shape."""
    kind = shape["kind"]
    if kind == "block":
        a, b = shape["size"]
        area, angle = a * b, 0.0 if a >= b else 90.0
    elif kind == "disk":
        a = b = 2 * shape["radius"]
        area, angle = math.pi * shape["radius"] ** 2, 0.0
    elif kind == "strip":
        a, b = shape["length"], shape["width"]
        area, angle = a * b, shape.get("angle", 0.0) % 180.0
    else:
        raise ParameterError(f"unknown shape kind {kind!r}")
    length, width = max(a, b), min(a, b)
    return ShapeDescriptors(float(area), float(length), float(width), length / width, float(angle))


def analytic_class(shape: dict, linear_first: bool = False) -> TofClass:
    if not shape.get("woody", True):
        return TofClass.BACKGROUND
    return classify_feature(analytic_descriptors(shape), linear_first)


def generate_fixture(scene: dict | None = None, seed: int = 0, linear_first: bool = False):
    """Render ``scene`` into ``(ndsm, dop, labels, metadata)``.

    ``ndsm`` is float32 heights, ``dop`` a uint8 R, G, B, NIR stack whose
    NDVI reproduces each surface's configured value (plus optional noise),
    and ``labels`` the analytic class codes 0-4. ``metadata`` lists each
    shape with its analytic class and any earlier shapes it paints over.
    """
    scene = copy.deepcopy(scene or {})
    rows, cols = (int(v) for v in scene.get("extent", (1000, 1000)))
    ps = float(scene.get("pixel_size", 0.2))
    ox, oy = scene.get("origin", DEFAULT_ORIGIN)
    bg = scene.get("background", {})
    sigma = float(scene.get("ndvi_noise", 0.0))
    if rows < 1 or cols < 1:
        raise ParameterError(f"extent must be positive, got {rows}x{cols}")
    ext_x, ext_y = cols * ps, rows * ps

    height = np.full((rows, cols), float(bg.get("height", 0.0)), dtype=np.float32)
    ndvi = np.full((rows, cols), float(bg.get("ndvi", 0.1)), dtype=np.float64)
    labels = np.zeros((rows, cols), dtype=np.uint8)
    owner = np.full((rows, cols), -1, dtype=np.int32)

    yc = (np.arange(rows) + 0.5) * ps
    xc = (np.arange(cols) + 0.5) * ps
    meta_shapes = []
    for i, shape in enumerate(scene.get("shapes", [])):
        x0, y0, x1, y1 = _bbox(shape)
        if x0 < 0 or y0 < 0 or x1 > ext_x or y1 > ext_y:
            raise ParameterError(f"shape {i} ({shape.get('name', shape['kind'])}) extends beyond the scene")
        # evaluate only inside the bounding box
        r0, r1 = int(y0 // ps), min(rows, int(math.ceil(y1 / ps)) + 1)
        c0, c1 = int(x0 // ps), min(cols, int(math.ceil(x1 / ps)) + 1)
        yy, xx = np.meshgrid(yc[r0:r1], xc[c0:c1], indexing="ij")
        inside = _inside(shape, xx, yy)
        sl = np.s_[r0:r1, c0:c1]
        covered = sorted(set(owner[sl][inside].tolist()) - {-1})
        cls = analytic_class(shape, linear_first)
        height[sl][inside] = shape.get("height", 10.0)
        ndvi[sl][inside] = shape.get("ndvi", 0.6)
        labels[sl][inside] = int(cls)
        owner[sl][inside] = i
        meta_shapes.append(
            {
                "index": i,
                "name": shape.get("name", f"{shape['kind']}_{i}"),
                "class_code": int(cls),
                "class_name": cls.label,
                "pixels": int(inside.sum()),
                "paints_over": covered,
            }
        )

    if sigma > 0:
        rng = np.random.default_rng(seed)
        ndvi = ndvi + rng.normal(0.0, sigma, size=ndvi.shape)
    ndvi = np.clip(ndvi, -0.99, 0.99)

    nir = np.full((rows, cols), float(NIR_REFLECTANCE))
    red = nir * (1 - ndvi) / (1 + ndvi)
    dop = np.zeros((4, rows, cols), dtype=np.uint8)
    dop[NIR] = NIR_REFLECTANCE
    dop[RED] = np.clip(np.rint(red), 0, 255).astype(np.uint8)
    dop[GREEN] = np.clip(np.rint(red * 1.2), 0, 255).astype(np.uint8)
    dop[BLUE] = np.clip(np.rint(red * 0.8), 0, 255).astype(np.uint8)

    t = GeoTransform(float(ox), float(oy), ps, ps)
    crs = scene.get("crs", DEFAULT_CRS)
    meta = {
        "seed": seed,
        "extent": [rows, cols],
        "layering": "later shapes paint over earlier ones",
        "shapes": meta_shapes,
        "overlaps": [[m["index"], j] for m in meta_shapes for j in m["paints_over"]],
    }
    return (
        RasterGrid(height, t, (None,), crs),
        RasterGrid(dop, t, (None,), crs),
        RasterGrid(labels, t, (None,), crs),
        meta,
    )

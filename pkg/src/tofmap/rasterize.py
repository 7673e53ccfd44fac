"""Burn classified polygons back into a label raster.

A pixel takes a polygon's class when the pixel center lies inside it. For
pixel-exact traced polygons this reproduces the source component exactly.
"""

from __future__ import annotations

import numpy as np
from rasterio import features

from .raster import GeoTransform


def rasterize_polygons(
    shapes,
    shape: tuple[int, int],
    transform: GeoTransform,
    dtype=np.uint8,
) -> np.ndarray:
    """``shapes`` is an iterable of ``(PolygonGeom, value)``; later shapes win on overlap."""
    geoms = [
        ({"type": "Polygon", "coordinates": poly.to_coords()}, int(value))
        for poly, value in shapes
        if value
    ]
    if not geoms:
        return np.zeros(shape, dtype=dtype)
    return features.rasterize(
        geoms,
        out_shape=shape,
        transform=transform.to_affine(),
        fill=0,
        all_touched=False,
        dtype=dtype,
    )

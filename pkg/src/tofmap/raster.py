"""Raster grids, geotransforms, band arithmetic and GeoTIFF I/O.

Imagery band order is fixed as (Red, Green, Blue, NIR). Map coordinates are
meters; rows increase southward, so ``pixel_size_y`` is stored as a positive
number and subtracted when moving down the grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .errors import AlignmentError, MissingBandError, ParameterError, ShapeError

RED, GREEN, BLUE, NIR = 0, 1, 2, 3

# 1 pixel = 20 cm after resampling
DEFAULT_PIXEL_SIZE = 0.2


@dataclass(frozen=True)
class GeoTransform:
    origin_x: float
    origin_y: float
    pixel_size_x: float = DEFAULT_PIXEL_SIZE
    pixel_size_y: float = DEFAULT_PIXEL_SIZE

    def __post_init__(self):
        if not (self.pixel_size_x > 0 and self.pixel_size_y > 0):
            raise ParameterError(
                f"pixel sizes must be positive, got {self.pixel_size_x}, {self.pixel_size_y}"
            )

    @property
    def pixel_area(self) -> float:
        return self.pixel_size_x * self.pixel_size_y

    def pixel_to_map(self, row, col):
        """Map coordinates of a (fractional) pixel position.

        Integer ``(row, col)`` is the pixel's upper-left corner; add 0.5 for
        its center. Works element-wise on arrays.
        """
        x = self.origin_x + np.asarray(col, dtype=np.float64) * self.pixel_size_x
        y = self.origin_y - np.asarray(row, dtype=np.float64) * self.pixel_size_y
        return x, y

    def map_to_pixel(self, x, y):
        """Inverse of :meth:`pixel_to_map`; returns fractional ``(row, col)``."""
        col = (np.asarray(x, dtype=np.float64) - self.origin_x) / self.pixel_size_x
        row = (self.origin_y - np.asarray(y, dtype=np.float64)) / self.pixel_size_y
        return row, col

    def window(self, row_off: int, col_off: int) -> "GeoTransform":
        x, y = self.pixel_to_map(row_off, col_off)
        return GeoTransform(float(x), float(y), self.pixel_size_x, self.pixel_size_y)

    def to_affine(self):
        from rasterio.transform import Affine

        return Affine(self.pixel_size_x, 0.0, self.origin_x, 0.0, -self.pixel_size_y, self.origin_y)

    @classmethod
    def from_affine(cls, aff) -> "GeoTransform":
        if abs(aff.b) > 1e-12 or abs(aff.d) > 1e-12:
            raise ParameterError("rotated geotransforms are not supported")
        if aff.e >= 0:
            raise ParameterError("north-up rasters expected (negative y pixel size)")
        return cls(aff.c, aff.f, aff.a, -aff.e)


@dataclass
class RasterGrid:
    """Multi-band pixel grid.

    ``data`` has shape ``(bands, height, width)``. ``nodata`` holds one
    sentinel per band, or ``None`` where a band has none; NaN is a valid
    sentinel for real-valued bands.
    """

    data: np.ndarray
    transform: GeoTransform
    nodata: tuple = ()
    crs: Any = None

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim == 2:
            data = data[np.newaxis]
        if data.ndim != 3 or data.shape[0] < 1:
            raise ShapeError(f"raster data must be (bands, height, width), got {data.shape}")
        self.data = data
        nodata = tuple(self.nodata) if isinstance(self.nodata, (tuple, list)) else (self.nodata,)
        if len(nodata) == 0:
            nodata = (None,) * data.shape[0]
        elif len(nodata) == 1 and data.shape[0] > 1:
            nodata = nodata * data.shape[0]
        if len(nodata) != data.shape[0]:
            raise ShapeError(f"{len(nodata)} nodata values for {data.shape[0]} bands")
        self.nodata = nodata

    @property
    def bands(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape[1], self.data.shape[2]

    def band(self, i: int) -> np.ndarray:
        return self.data[i]

    def valid(self, i: int = 0) -> np.ndarray:
        """Boolean array, True where band ``i`` is not nodata."""
        nd = self.nodata[i]
        band = self.data[i]
        if nd is None:
            ok = np.ones(band.shape, dtype=bool)
        elif isinstance(nd, float) and math.isnan(nd):
            ok = ~np.isnan(band)
        else:
            ok = band != nd
        if np.issubdtype(band.dtype, np.floating):
            ok &= ~np.isnan(band)
        return ok


@dataclass
class BinaryMask:
    bits: np.ndarray
    transform: GeoTransform
    crs: Any = field(default=None)

    def __post_init__(self):
        bits = np.asarray(self.bits)
        if bits.ndim != 2:
            raise ShapeError(f"mask must be 2-D, got {bits.shape}")
        self.bits = bits.astype(bool, copy=False)

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.bits.shape

    def count(self) -> int:
        return int(self.bits.sum())


def check_aligned(a, b, what: str = "rasters") -> None:
    """Raise AlignmentError unless ``a`` and ``b`` share extent and transform."""
    if tuple(a.shape) != tuple(b.shape):
        raise AlignmentError(f"{what} differ in shape: {tuple(a.shape)} vs {tuple(b.shape)}")
    ta, tb = a.transform, b.transform
    if not (
        math.isclose(ta.origin_x, tb.origin_x, abs_tol=1e-6)
        and math.isclose(ta.origin_y, tb.origin_y, abs_tol=1e-6)
        and math.isclose(ta.pixel_size_x, tb.pixel_size_x, rel_tol=1e-9)
        and math.isclose(ta.pixel_size_y, tb.pixel_size_y, rel_tol=1e-9)
    ):
        raise AlignmentError(f"{what} have different geotransforms: {ta} vs {tb}")


def compute_ndvi(grid: RasterGrid, domain: BinaryMask | None = None) -> RasterGrid:
    """NDVI = (NIR - Red) / (NIR + Red) inside ``domain``; NaN elsewhere.

    Pixels with NIR + Red == 0 get NDVI 0.
    """
    if grid.bands < 4:
        raise MissingBandError(f"NDVI needs Red and NIR (4 bands), raster has {grid.bands}")
    if domain is None:
        inside = np.ones(grid.shape, dtype=bool)
    else:
        check_aligned(grid, domain, "imagery and mask")
        inside = domain.bits
    inside = inside & grid.valid(RED) & grid.valid(NIR)

    red = grid.data[RED].astype(np.float64)
    nir = grid.data[NIR].astype(np.float64)
    denom = nir + red
    out = np.full(grid.shape, np.nan, dtype=np.float32)
    nonzero = inside & (denom != 0)
    out[nonzero] = ((nir[nonzero] - red[nonzero]) / denom[nonzero]).astype(np.float32)
    out[inside & (denom == 0)] = 0.0
    return RasterGrid(out, grid.transform, (float("nan"),), grid.crs)


def _resampled_size(n: int, src_size: float, dst_size: float) -> int:
    return max(1, math.ceil(n * src_size / dst_size - 1e-9))


def _nearest_index(n_out: int, ratio: float, n_src: int) -> np.ndarray:
    centers = (np.arange(n_out, dtype=np.float64) + 0.5) * ratio
    return np.clip(np.floor(centers + 1e-9).astype(np.int64), 0, n_src - 1)


def resample_nearest(grid: RasterGrid, target_pixel_size: float) -> RasterGrid:
    """Nearest-neighbor resampling to a square target pixel size.

    Each output pixel center is mapped into the source grid and floored to a
    source index, so every output sample is a copy of some input sample.
    """
    if not target_pixel_size > 0:
        raise ParameterError(f"target pixel size must be positive, got {target_pixel_size}")
    t = grid.transform
    if (
        math.isclose(t.pixel_size_x, target_pixel_size, rel_tol=1e-12)
        and math.isclose(t.pixel_size_y, target_pixel_size, rel_tol=1e-12)
    ):
        return RasterGrid(grid.data.copy(), t, grid.nodata, grid.crs)

    h_out = _resampled_size(grid.height, t.pixel_size_y, target_pixel_size)
    w_out = _resampled_size(grid.width, t.pixel_size_x, target_pixel_size)
    rows = _nearest_index(h_out, target_pixel_size / t.pixel_size_y, grid.height)
    cols = _nearest_index(w_out, target_pixel_size / t.pixel_size_x, grid.width)
    data = grid.data[:, rows[:, None], cols[None, :]]
    out_t = GeoTransform(t.origin_x, t.origin_y, target_pixel_size, target_pixel_size)
    return RasterGrid(np.ascontiguousarray(data), out_t, grid.nodata, grid.crs)


# ---------------------------------------------------------------------------
# GeoTIFF I/O
# ---------------------------------------------------------------------------


def read_raster(path: str | Path) -> RasterGrid:
    import rasterio

    with rasterio.open(path) as src:
        data = src.read()
        transform = GeoTransform.from_affine(src.transform)
        nodata = tuple(src.nodatavals)
        crs = _crs_string(src.crs)
    return RasterGrid(data, transform, nodata, crs)


def _crs_string(crs) -> str | None:
    if not crs:
        return None
    epsg = crs.to_epsg()
    return f"EPSG:{epsg}" if epsg else crs.to_wkt()


def write_raster(path: str | Path, grid: RasterGrid, compress: str | None = "deflate") -> Path:
    """Write ``grid`` as a GeoTIFF; the first band's nodata becomes the file's tag."""
    import rasterio

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = grid.data
    if data.dtype == bool:
        data = data.astype(np.uint8)
    profile = dict(
        driver="GTiff",
        width=grid.width,
        height=grid.height,
        count=grid.bands,
        dtype=data.dtype.name,
        transform=grid.transform.to_affine(),
    )
    if grid.crs is not None:
        profile["crs"] = grid.crs
    nd = grid.nodata[0]
    if nd is not None:
        profile["nodata"] = nd
    if compress:
        profile["compress"] = compress
    with rasterio.open(path, "w", **profile) as dst:
        dst.write(data)
    return path


def write_mask(path: str | Path, mask: BinaryMask) -> Path:
    grid = RasterGrid(mask.bits.astype(np.uint8), mask.transform, (None,), mask.crs)
    return write_raster(path, grid)


def read_mask(path: str | Path) -> BinaryMask:
    grid = read_raster(path)
    return BinaryMask(grid.data[0] != 0, grid.transform, grid.crs)


def stack_bands(bands: Sequence[np.ndarray], transform: GeoTransform, nodata=None, crs=None) -> RasterGrid:
    return RasterGrid(np.stack([np.asarray(b) for b in bands]), transform, (nodata,), crs)

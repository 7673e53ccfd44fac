"""Woody-vegetation mask from nDSM and orthophoto.

Pipeline: height threshold -> NDVI inside the height mask -> two-cluster
1-D k-means on those NDVI values -> keep the high-NDVI cluster ->
morphological closing with a rectangular structuring element.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import DegenerateInputError, ParameterError, ShapeError
from .raster import BinaryMask, RasterGrid, check_aligned, compute_ndvi

logger = logging.getLogger(__name__)

KMEANS_SCOPES = ("area", "tile")


@dataclass
class MaskParams:
    height_threshold: float = 3.0
    kmeans_k: int = 2
    closing_window: tuple[int, int] = (5, 5)
    kmeans_max_iter: int = 100
    kmeans_tol: float = 1e-6

    def __post_init__(self):
        self.closing_window = tuple(int(v) for v in self.closing_window)
        if not self.height_threshold > 0:
            raise ParameterError(f"height_threshold must be > 0, got {self.height_threshold}")
        if self.kmeans_k != 2:
            raise ParameterError("only k=2 is supported")
        _check_window(self.closing_window)
        if self.kmeans_max_iter < 1:
            raise ParameterError("kmeans_max_iter must be >= 1")
        if not self.kmeans_tol >= 0:
            raise ParameterError("kmeans_tol must be >= 0")


@dataclass
class KMeansResult:
    """Two-cluster split of 1-D NDVI values.

    ``centers`` is sorted ascending, so the vegetation cluster (the larger
    mean) is always index 1. ``assignment`` follows the order of the input
    values. ``objective`` records the within-cluster sum of squares after
    every Lloyd update, plus one final entry when the exact split improved on
    Lloyd's fixed point (``refined``).
    """

    centers: np.ndarray
    assignment: np.ndarray
    vegetation_cluster: int = 1
    iterations: int = 0
    objective: list[float] = field(default_factory=list)
    refined: bool = False

    @property
    def boundary(self) -> float:
        """NDVI values strictly above this belong to the vegetation cluster."""
        return float(0.5 * (self.centers[0] + self.centers[1]))


def _check_window(window) -> tuple[int, int]:
    if len(window) != 2:
        raise ParameterError(f"window must have two dimensions, got {window!r}")
    h, w = (int(v) for v in window)
    if h < 1 or w < 1 or h % 2 == 0 or w % 2 == 0:
        raise ParameterError(f"structuring element must be odd in both dimensions, got {h}x{w}")
    return h, w


def build_height_mask(ndsm: RasterGrid, params: MaskParams | None = None) -> BinaryMask:
    """True where the nDSM is valid and at least ``height_threshold`` meters."""
    params = params or MaskParams()
    if ndsm.bands != 1:
        raise ShapeError(f"nDSM must be single-band, got {ndsm.bands} bands")
    band = ndsm.data[0]
    bits = ndsm.valid(0) & (band >= params.height_threshold)
    return BinaryMask(bits, ndsm.transform, ndsm.crs)


def kmeans_1d_two(values: np.ndarray, max_iter: int = 100, tol: float = 1e-6) -> KMeansResult:
    """Lloyd's algorithm for two clusters on 1-D data.

    Centers start at the 10th and 90th percentiles. Because clusters in one
    dimension are contiguous in sorted order, each assignment step reduces
    to locating the midpoint between centers with a binary search, and each
    update step to two prefix-sum lookups.

    Lloyd's can stop at a local fixed point when the two modes overlap. The
    same prefix sums give the cost of every contiguous split, so the
    globally optimal split is found in O(n) after convergence and replaces
    the Lloyd result when strictly better. The optimum is itself a Lloyd
    fixed point, so the result is still one.
    """
    x = np.asarray(values, dtype=np.float64).ravel()
    n = x.size
    if n < 2:
        raise DegenerateInputError(f"need at least 2 values, got {n}")
    v = np.sort(x)
    if v[0] == v[-1]:
        raise DegenerateInputError("all values are equal; nothing to split")

    csum = np.concatenate(([0.0], np.cumsum(v)))
    csq = np.concatenate(([0.0], np.cumsum(v * v)))

    lo, hi = np.percentile(v, [10.0, 90.0])
    if lo == hi:
        lo, hi = v[0], v[-1]

    objective: list[float] = []
    it = 0
    for it in range(1, max_iter + 1):
        # values equidistant from both centers go to the low cluster
        split = int(np.searchsorted(v, 0.5 * (lo + hi), side="right"))
        n_lo, n_hi = split, n - split
        s_lo, s_hi = csum[split], csum[n] - csum[split]
        new_lo, new_hi = s_lo / n_lo, s_hi / n_hi
        sse = (csq[split] - s_lo * new_lo) + (csq[n] - csq[split] - s_hi * new_hi)
        objective.append(float(max(sse, 0.0)))
        move = max(abs(new_lo - lo), abs(new_hi - hi))
        lo, hi = new_lo, new_hi
        if move < tol:
            break

    k = np.arange(1, n)
    costs = (csq[k] - csum[k] ** 2 / k) + ((csq[n] - csq[k]) - (csum[n] - csum[k]) ** 2 / (n - k))
    best = int(np.argmin(costs))
    refined = False
    if costs[best] < objective[-1] and v[best] < v[best + 1]:
        split = best + 1
        opt_lo, opt_hi = csum[split] / split, (csum[n] - csum[split]) / (n - split)
        if max(abs(opt_lo - lo), abs(opt_hi - hi)) > 0.0:
            lo, hi = opt_lo, opt_hi
            objective.append(float(max(costs[best], 0.0)))
            refined = True
            logger.debug("k-means: exact split improved Lloyd fixed point to %.6g", costs[best])

    centers = np.array([lo, hi])
    assignment = (x > 0.5 * (lo + hi)).astype(np.int8)
    return KMeansResult(centers, assignment, 1, it, objective, refined)


def split_ndvi_kmeans(ndvi: RasterGrid, mask: BinaryMask, params: MaskParams | None = None) -> KMeansResult:
    """Cluster the NDVI values of in-mask pixels into two groups.

    ``assignment`` is ordered like ``ndvi.data[0][inside]`` with ``inside``
    being the mask restricted to valid NDVI.
    """
    params = params or MaskParams()
    check_aligned(ndvi, mask, "NDVI and mask")
    inside = mask.bits & ndvi.valid(0)
    return kmeans_1d_two(ndvi.data[0][inside], params.kmeans_max_iter, params.kmeans_tol)


def _box_dilate(bits: np.ndarray, h: int, w: int) -> np.ndarray:
    return ndimage.maximum_filter(bits.astype(np.uint8, copy=False), size=(h, w), mode="constant", cval=0).astype(bool)


def _box_erode(bits: np.ndarray, h: int, w: int) -> np.ndarray:
    return ndimage.minimum_filter(bits.astype(np.uint8, copy=False), size=(h, w), mode="constant", cval=0).astype(bool)


def morphological_close(mask: BinaryMask, window=(5, 5)) -> BinaryMask:
    """Dilate then erode with an ``h x w`` rectangle.

    The image is treated as embedded in an all-false plane: it is padded by
    the element's half-size with false before dilating, the erosion runs on
    the padded canvas, and the result is cropped back. This keeps closing
    extensive and idempotent right up to the image border.
    """
    h, w = _check_window(window)
    ph, pw = h // 2, w // 2
    canvas = np.pad(mask.bits.astype(bool), ((ph, ph), (pw, pw)), constant_values=False)
    closed = _box_erode(_box_dilate(canvas, h, w), h, w)
    return BinaryMask(closed[ph : ph + mask.height, pw : pw + mask.width], mask.transform, mask.crs)


def vegetation_split(ndvi: RasterGrid, height_mask: BinaryMask, params: MaskParams,
                     kmeans: KMeansResult | None = None) -> tuple[np.ndarray, KMeansResult | None]:
    """Keep the high-NDVI cluster of the height mask; returns (bits, k-means result).

    A precomputed ``kmeans`` (e.g. fitted over a whole study area) is applied
    via its decision boundary instead of refitting. When the values inside
    the mask cannot be split (one value, or all equal) every pixel is kept.
    """
    inside = height_mask.bits & ndvi.valid(0)
    if not inside.any():
        return np.zeros(height_mask.shape, dtype=bool), kmeans
    if kmeans is None:
        try:
            kmeans = split_ndvi_kmeans(ndvi, height_mask, params)
        except DegenerateInputError as exc:
            logger.warning("cannot split NDVI inside height mask (%s); keeping all elevated pixels", exc)
            return inside.copy(), None
    keep = np.zeros(height_mask.shape, dtype=bool)
    keep[inside] = ndvi.data[0][inside] > kmeans.boundary
    return keep, kmeans


def collect_mask_ndvi(ndsm: RasterGrid, dop: RasterGrid, params: MaskParams) -> np.ndarray:
    """NDVI values of elevated pixels, for fitting one k-means over many tiles."""
    hmask = build_height_mask(ndsm, params)
    ndvi = compute_ndvi(dop, hmask)
    return ndvi.data[0][hmask.bits & ndvi.valid(0)]


def build_woody_mask(
    ndsm: RasterGrid,
    dop: RasterGrid,
    params: MaskParams | None = None,
    kmeans_scope: str = "area",
    tile_size: int | None = None,
    kmeans: KMeansResult | None = None,
) -> BinaryMask:
    """Full mask chain: height mask, NDVI, k-means split, closing.

    With ``kmeans_scope="area"`` one clustering covers the whole raster (or
    the supplied ``kmeans`` is reused). With ``"tile"`` the raster is cut
    into ``tile_size`` blocks that are clustered separately.
    """
    params = params or MaskParams()
    if kmeans_scope not in KMEANS_SCOPES:
        raise ParameterError(f"kmeans_scope must be one of {KMEANS_SCOPES}, got {kmeans_scope!r}")
    check_aligned(ndsm, dop, "nDSM and orthophoto")

    hmask = build_height_mask(ndsm, params)
    if not hmask.bits.any():
        return BinaryMask(np.zeros(hmask.shape, dtype=bool), ndsm.transform, ndsm.crs)
    ndvi = compute_ndvi(dop, hmask)

    if kmeans_scope == "area":
        veg, _ = vegetation_split(ndvi, hmask, params, kmeans)
    else:
        if not tile_size or tile_size < 1:
            raise ParameterError("kmeans_scope='tile' needs a positive tile_size")
        veg = np.zeros(hmask.shape, dtype=bool)
        for r0 in range(0, hmask.height, tile_size):
            for c0 in range(0, hmask.width, tile_size):
                sl = np.s_[r0 : r0 + tile_size, c0 : c0 + tile_size]
                sub_t = ndsm.transform.window(r0, c0)
                sub_ndvi = RasterGrid(ndvi.data[0][sl], sub_t, ndvi.nodata)
                sub_mask = BinaryMask(hmask.bits[sl], sub_t)
                veg[sl], _ = vegetation_split(sub_ndvi, sub_mask, params)

    closed = morphological_close(BinaryMask(veg, ndsm.transform, ndsm.crs), params.closing_window)
    return closed

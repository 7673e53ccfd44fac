"""Stitch overlapping per-window softmax predictions into one class map.

Each window adds its class probabilities into a running sum and bumps a
coverage counter. The final map is the per-pixel mean, and the label is its
argmax (ties go to the lowest class index). A hard-vote mode instead adds a
one-hot vector per window.

Sums are kept as int64 multiples of 2**-52. Integer addition is
associative, so any order or partition of the same patches gives
bit-identical sums; the rounding on entry is at most 2**-53 per value.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from .errors import BoundsError, DataError, IncompleteCoverageError, ParameterError, ValidationError
from .splits import window_origins

logger = logging.getLogger(__name__)

N_CLASSES = 5
NORM_TOL = 1e-3
SCALE_BITS = 52
_SCALE = float(2**SCALE_BITS)
# coverage beyond this could overflow int64 sums of values up to 1
MAX_COVERAGE = 2 ** (62 - SCALE_BITS)
VOTE_MODES = ("soft", "hard")


@dataclass
class SoftmaxPatch:
    """Class probabilities ``(n_classes, window, window)`` for the window at ``origin``."""

    origin: tuple[int, int]
    probs: np.ndarray

    @property
    def window(self) -> int:
        return self.probs.shape[-1]


class SoftmaxAccumulator:
    """Running per-pixel class sums and window coverage over a fixed extent.

    Accumulators over disjoint patch sets can be combined with :meth:`merge`
    in any grouping; the result does not depend on patch order.
    """

    def __init__(self, height: int, width: int, n_classes: int = N_CLASSES, vote: str = "soft"):
        if vote not in VOTE_MODES:
            raise ParameterError(f"vote must be one of {VOTE_MODES}, got {vote!r}")
        if height < 1 or width < 1:
            raise ParameterError(f"extent must be positive, got {height}x{width}")
        self.height = height
        self.width = width
        self.n_classes = n_classes
        self.vote = vote
        self.units = np.zeros((n_classes, height, width), dtype=np.int64)
        self.coverage = np.zeros((height, width), dtype=np.int64)

    @property
    def class_sums(self) -> np.ndarray:
        """Per-pixel per-class sums as float64."""
        return self.units / _SCALE

    @property
    def extent(self) -> tuple[int, int]:
        return self.height, self.width

    def add(self, patch: SoftmaxPatch) -> "SoftmaxAccumulator":
        return accumulate_patch(self, patch)

    def merge(self, other: "SoftmaxAccumulator") -> "SoftmaxAccumulator":
        if other.extent != self.extent or other.n_classes != self.n_classes or other.vote != self.vote:
            raise ParameterError("cannot merge accumulators with different extent, classes or vote mode")
        self.units += other.units
        self.coverage += other.coverage
        return self


def _check_normalized(probs: np.ndarray, origin) -> None:
    bad_range = (probs < 0) | (probs > 1) | ~np.isfinite(probs)
    bad = bad_range.any(axis=0) | (np.abs(probs.sum(axis=0) - 1.0) > NORM_TOL)
    if bad.any():
        r, c = (int(v) for v in np.argwhere(bad)[0])
        vec = probs[:, r, c].tolist()
        raise ValidationError(
            f"unnormalized probabilities at pixel ({origin[0] + r}, {origin[1] + c}): {vec}",
        )


def accumulate_patch(acc: SoftmaxAccumulator, patch: SoftmaxPatch) -> SoftmaxAccumulator:
    probs = np.asarray(patch.probs)
    if probs.ndim != 3 or probs.shape[0] != acc.n_classes:
        raise ParameterError(f"patch probs must be ({acc.n_classes}, h, w), got {probs.shape}")
    r0, c0 = (int(v) for v in patch.origin)
    h, w = probs.shape[1:]
    if r0 < 0 or c0 < 0 or r0 + h > acc.height or c0 + w > acc.width:
        raise BoundsError(f"window at ({r0}, {c0}) size {h}x{w} exceeds extent {acc.height}x{acc.width}")
    _check_normalized(probs, (r0, c0))
    cov = acc.coverage[r0 : r0 + h, c0 : c0 + w]
    if cov.max() >= MAX_COVERAGE:
        raise ParameterError(f"more than {MAX_COVERAGE} windows overlap one pixel")
    if acc.vote == "hard":
        winner = np.argmax(probs, axis=0)
        add = (winner[None] == np.arange(acc.n_classes)[:, None, None]).astype(np.int64) << SCALE_BITS
    else:
        add = np.rint(probs.astype(np.float64) * _SCALE).astype(np.int64)
    acc.units[:, r0 : r0 + h, c0 : c0 + w] += add
    cov += 1
    return acc


def finalize(acc: SoftmaxAccumulator) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(labels uint8 (H, W), mean float64 (n_classes, H, W))``.

    In hard-vote mode the "mean" is the vote share per class.
    """
    missing = int((acc.coverage == 0).sum())
    if missing:
        raise IncompleteCoverageError(missing)
    mean = acc.units / (acc.coverage * _SCALE)
    # np.argmax returns the first maximum, i.e. the lowest class index on ties
    labels = np.argmax(mean, axis=0).astype(np.uint8)
    return labels, mean


def merge_patches(
    patches: Iterable[SoftmaxPatch],
    extent: tuple[int, int],
    n_classes: int = N_CLASSES,
    vote: str = "soft",
) -> tuple[np.ndarray, np.ndarray]:
    acc = SoftmaxAccumulator(extent[0], extent[1], n_classes, vote)
    n = 0
    for p in patches:
        accumulate_patch(acc, p)
        n += 1
    logger.info("merged %d patches over %dx%d", n, *extent)
    return finalize(acc)


def grid_origins(extent: tuple[int, int], window: int, stride: int) -> list[tuple[int, int]]:
    rows = window_origins(extent[0], window, stride)
    cols = window_origins(extent[1], window, stride)
    return [(r, c) for r in rows for c in cols]


def sliding_window_predict(
    image: np.ndarray,
    predict: Callable[[np.ndarray], np.ndarray],
    window: int = 1024,
    stride: int = 128,
    n_classes: int = N_CLASSES,
    vote: str = "soft",
) -> tuple[np.ndarray, np.ndarray]:
    """Run ``predict`` on every grid window of ``image (bands, H, W)`` and merge the outputs."""
    extent = image.shape[-2:]
    patches = (
        SoftmaxPatch((r, c), predict(image[..., r : r + window, c : c + window]))
        for r, c in grid_origins(extent, window, stride)
    )
    return merge_patches(patches, extent, n_classes, vote)


# ---------------------------------------------------------------------------
# patch I/O
# ---------------------------------------------------------------------------


def save_patch_dir(patches: Iterable[SoftmaxPatch], out_dir: str | Path) -> Path:
    """Write ``<r>_<c>.npy`` arrays each with a ``.json`` sidecar ``{origin, window}``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for p in patches:
        stem = f"{p.origin[0]}_{p.origin[1]}"
        np.save(out / f"{stem}.npy", p.probs)
        (out / f"{stem}.json").write_text(json.dumps({"origin": list(p.origin), "window": p.window}))
    return out


def load_patch_dir(path: str | Path) -> Iterable[SoftmaxPatch]:
    """Stream patches from a sidecar directory or a single ``.npz`` container.

    The container holds ``origins (n, 2)`` and ``probs (n, classes, w, w)``.
    """
    path = Path(path)
    if path.is_file():
        if path.suffix != ".npz":
            raise DataError(f"{path}: expected a directory or an .npz container")
        with np.load(path) as z:
            origins, probs = z["origins"], z["probs"]
        for o, p in zip(origins, probs):
            yield SoftmaxPatch((int(o[0]), int(o[1])), p)
        return
    if not path.is_dir():
        raise DataError(f"{path}: no such patch directory")
    sidecars = sorted(path.glob("*.json"))
    if not sidecars:
        raise DataError(f"{path}: no patch sidecars found")
    for meta_path in sidecars:
        meta = json.loads(meta_path.read_text())
        probs = np.load(meta_path.with_suffix(".npy"))
        window = meta.get("window")
        if window is not None and probs.shape[-2:] != (window, window):
            raise DataError(f"{meta_path}: array is {probs.shape[-2:]}, sidecar says window {window}")
        yield SoftmaxPatch(tuple(int(v) for v in meta["origin"]), probs)


def save_patch_npz(patches: Iterable[SoftmaxPatch], path: str | Path) -> Path:
    patches = list(patches)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez_compressed(
        path,
        origins=np.array([p.origin for p in patches], dtype=np.int64).reshape(-1, 2),
        probs=np.stack([p.probs for p in patches]),
    )
    return path

"""Tile class distributions, validation/test selection, patch grids, area hold-out plans."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .classify import WOODY_CLASSES
from .errors import DataError, ParameterError, SplitInfeasibleError
from .raster import GeoTransform, RasterGrid, check_aligned

logger = logging.getLogger(__name__)

STUDY_AREAS = ("SH", "BB", "NRW_N", "NRW_S")
WOODY_NAMES = tuple(c.label for c in WOODY_CLASSES)
SPLIT_SCOPES = ("area", "global")
AUGMENTATIONS = ("orig", "hflip", "vflip")


@dataclass
class TileManifest:
    tile_id: str
    study_area: str
    class_fractions: dict[str, float]
    width: int = 5000
    height: int = 5000

    def __post_init__(self):
        unknown = set(self.class_fractions) - set(WOODY_NAMES) - {"Background"}
        if unknown:
            raise DataError(f"tile {self.tile_id}: unknown class keys {sorted(map(str, unknown))}")
        fr = {name: float(self.class_fractions.get(name, 0.0)) for name in WOODY_NAMES}
        if any(not (0.0 <= v <= 1.0) for v in fr.values()):
            raise DataError(f"tile {self.tile_id}: fractions must lie in [0, 1], got {fr}")
        if sum(fr.values()) > 1.0 + 1e-9:
            raise DataError(f"tile {self.tile_id}: woody fractions sum to more than 1")
        self.class_fractions = fr

    @property
    def pixels(self) -> int:
        return self.width * self.height

    def vector(self) -> np.ndarray:
        return np.array([self.class_fractions[n] for n in WOODY_NAMES])


@dataclass
class SplitPlan:
    train: list[str] = field(default_factory=list)
    val: list[str] = field(default_factory=list)
    test: list[str] = field(default_factory=list)
    seed: int | None = None
    max_deviation_pp: float = 0.0
    deviations_pp: dict = field(default_factory=dict)
    attempts: dict = field(default_factory=dict)
    name: str | None = None
    train_areas: list[str] = field(default_factory=list)
    test_areas: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SplitPlan":
        return cls(**d)

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2))
        return path

    @classmethod
    def load(cls, path: str | Path) -> "SplitPlan":
        return cls.from_dict(json.loads(Path(path).read_text()))


# ---------------------------------------------------------------------------
# class distributions
# ---------------------------------------------------------------------------


def class_pixel_counts(labels) -> np.ndarray:
    """Pixel count per class code 0-4."""
    arr = labels.data[0] if isinstance(labels, RasterGrid) else np.asarray(labels)
    flat = arr.ravel()
    if flat.size and (flat.min() < 0 or flat.max() > 4):
        bad = sorted(set(np.unique(flat[(flat < 0) | (flat > 4)]).tolist()))
        raise DataError(f"unknown class codes in label raster: {bad}")
    return np.bincount(flat.astype(np.int64), minlength=5)[:5]


def tile_distribution(labels) -> dict[str, float]:
    """Fraction of tile pixels in each woody class."""
    counts = class_pixel_counts(labels)
    total = counts.sum()
    if total == 0:
        return {n: 0.0 for n in WOODY_NAMES}
    return {c.label: float(counts[int(c)] / total) for c in WOODY_CLASSES}


def aggregate_fractions(tiles: list[TileManifest]) -> dict[str, float]:
    """Pixel-weighted class fractions over a set of tiles."""
    w = np.array([t.pixels for t in tiles], dtype=np.float64)
    F = np.array([t.vector() for t in tiles])
    agg = (w @ F) / w.sum()
    return dict(zip(WOODY_NAMES, agg.tolist()))


def infer_study_area(name: str, areas=STUDY_AREAS) -> str:
    """Longest known study-area prefix of a tile name (``NRW_N_12`` -> ``NRW_N``)."""
    hits = [a for a in areas if name == a or name.startswith(a + "_") or name.startswith(a + "-")]
    if not hits:
        raise DataError(f"cannot infer study area from {name!r}; expected a prefix in {list(areas)}")
    return max(hits, key=len)


def manifest_from_labels(paths, areas=STUDY_AREAS) -> list[TileManifest]:
    from .raster import read_raster

    out = []
    for p in sorted(Path(x) for x in paths):
        grid = read_raster(p)
        out.append(
            TileManifest(p.stem, infer_study_area(p.stem, areas), tile_distribution(grid), grid.width, grid.height)
        )
    return out


def write_manifest(path: str | Path, tiles: list[TileManifest]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["tile_id", "study_area", "width", "height", *WOODY_NAMES])
        for t in tiles:
            w.writerow([t.tile_id, t.study_area, t.width, t.height, *(repr(t.class_fractions[n]) for n in WOODY_NAMES)])
    return path


def read_manifest(path: str | Path) -> list[TileManifest]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [
        TileManifest(
            r["tile_id"],
            r["study_area"],
            {n: float(r[n]) for n in WOODY_NAMES},
            int(r.get("width") or 5000),
            int(r.get("height") or 5000),
        )
        for r in rows
    ]


# ---------------------------------------------------------------------------
# validation / test selection
# ---------------------------------------------------------------------------


def _subset_deviation(idx: np.ndarray, w: np.ndarray, F: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Max per-class |subset fraction - target| in percentage points, per row of ``idx``."""
    ww = w[idx]
    frac = np.einsum("bk,bkc->bc", ww, F[idx]) / ww.sum(axis=1, keepdims=True)
    return np.abs(frac - target).max(axis=1) * 100.0


def select_validation_test(
    tiles: list[TileManifest],
    seed: int = 0,
    n_val: int = 5,
    n_test: int = 5,
    max_deviation: float = 1.0,
    max_attempts: int = 100_000,
    scope: str = "area",
    batch: int = 2048,
) -> SplitPlan:
    """Randomly draw validation and test tiles until their class mix matches the reference.

    Every attempt draws ``n_val`` + ``n_test`` distinct tiles per study area.
    It is accepted when, for every woody class, both the validation and the
    test aggregate fraction lie within ``max_deviation`` percentage points of
    the reference: the study area's own aggregate (``scope="area"``, one
    search per area) or the all-areas aggregate (``scope="global"``, one
    joint search). The first accepted draw wins, so the plan is a pure
    function of ``tiles`` and ``seed``.
    """
    if scope not in SPLIT_SCOPES:
        raise ParameterError(f"scope must be one of {SPLIT_SCOPES}, got {scope!r}")
    if n_val < 1 or n_test < 1:
        raise ParameterError("n_val and n_test must be >= 1")
    ids = [t.tile_id for t in tiles]
    if len(set(ids)) != len(ids):
        raise ParameterError("tile ids must be unique")

    by_area: dict[str, list[TileManifest]] = {}
    for t in sorted(tiles, key=lambda t: t.tile_id):
        by_area.setdefault(t.study_area, []).append(t)
    areas = sorted(by_area)
    need = n_val + n_test
    for a in areas:
        if len(by_area[a]) <= need:
            raise ParameterError(f"study area {a} has {len(by_area[a])} tiles, need more than {need}")

    rng = np.random.default_rng(seed)
    plan = SplitPlan(seed=seed)
    groups = [[a] for a in areas] if scope == "area" else [areas]

    for group in groups:
        members = [t for a in group for t in by_area[a]]
        w = np.array([t.pixels for t in members], dtype=np.float64)
        F = np.array([t.vector() for t in members])
        target = (w @ F) / w.sum()
        offsets = np.cumsum([0] + [len(by_area[a]) for a in group])
        key = "+".join(group) if scope == "global" else group[0]

        best = np.inf
        found = None
        tried = 0
        while tried < max_attempts and found is None:
            b = min(batch, max_attempts - tried)
            val_parts, test_parts = [], []
            for gi, a in enumerate(group):
                n = len(by_area[a])
                draw = rng.permuted(np.tile(np.arange(n), (b, 1)), axis=1)[:, :need] + offsets[gi]
                val_parts.append(draw[:, :n_val])
                test_parts.append(draw[:, n_val:])
            val_idx = np.concatenate(val_parts, axis=1)
            test_idx = np.concatenate(test_parts, axis=1)
            dev = np.maximum(_subset_deviation(val_idx, w, F, target), _subset_deviation(test_idx, w, F, target))
            best = min(best, float(dev.min()))
            ok = np.nonzero(dev <= max_deviation)[0]
            if len(ok):
                k = int(ok[0])
                found = (val_idx[k], test_idx[k], float(dev[k]))
                tried += k + 1
            else:
                tried += b
        if found is None:
            raise SplitInfeasibleError(
                f"no {n_val}+{n_test} tile draw for {key} within {max_deviation} pp after {tried} attempts", best
            )
        val_idx, test_idx, dev = found
        plan.val.extend(sorted(members[i].tile_id for i in val_idx))
        plan.test.extend(sorted(members[i].tile_id for i in test_idx))
        plan.deviations_pp[key] = dev
        plan.attempts[key] = tried
        logger.info("%s: accepted draw after %d attempts (deviation %.3f pp)", key, tried, dev)

    chosen = set(plan.val) | set(plan.test)
    plan.train = sorted(i for i in ids if i not in chosen)
    plan.val.sort()
    plan.test.sort()
    plan.max_deviation_pp = max(plan.deviations_pp.values()) if plan.deviations_pp else 0.0
    return plan


# ---------------------------------------------------------------------------
# patch grids
# ---------------------------------------------------------------------------


def window_origins(extent: int, window: int, stride: int) -> list[int]:
    """Offsets ``0, stride, 2*stride, ...`` that fit, plus an edge-aligned last window."""
    if window < 1 or stride < 1:
        raise ParameterError(f"window and stride must be >= 1, got {window}, {stride}")
    if window > extent:
        raise ParameterError(f"window {window} larger than extent {extent}")
    offsets = list(range(0, extent - window + 1, stride))
    if offsets[-1] != extent - window:
        offsets.append(extent - window)
    return offsets


def patches_per_tile(extent: int = 5000, window: int = 1024, stride: int | None = None) -> int:
    return len(window_origins(extent, window, stride or window)) ** 2


def expected_patch_counts(
    n_areas: int = 4,
    train_per_area: int = 90,
    val_per_area: int = 5,
    extent: int = 5000,
    window: int = 1024,
) -> dict[str, int]:
    per_tile = patches_per_tile(extent, window)
    return {
        "per_tile": per_tile,
        "train_original": n_areas * train_per_area * per_tile,
        "train": n_areas * train_per_area * per_tile * len(AUGMENTATIONS),
        "val": n_areas * val_per_area * per_tile,
    }


@dataclass
class Patch:
    row: int
    col: int
    aug: str
    image: np.ndarray
    labels: np.ndarray
    transform: GeoTransform


def flip(arr: np.ndarray, aug: str) -> np.ndarray:
    """Flip the two trailing (row, col) axes; ``hflip`` mirrors left-right."""
    if aug == "orig":
        return arr
    if aug == "hflip":
        return arr[..., ::-1].copy()
    if aug == "vflip":
        return arr[..., ::-1, :].copy()
    raise ParameterError(f"unknown augmentation {aug!r}")


def extract_patches_augmented(
    tile: RasterGrid,
    labels: RasterGrid,
    window: int = 1024,
    stride: int | None = None,
    augment: bool = True,
) -> Iterator[Patch]:
    """Yield grid windows of image and labels, each followed by its flipped copies.

    Validation and test tiles should pass ``augment=False``.
    """
    check_aligned(tile, labels, "image and label tiles")
    stride = stride or window
    rows = window_origins(tile.height, window, stride)
    cols = window_origins(tile.width, window, stride)
    augs = AUGMENTATIONS if augment else ("orig",)
    for r in rows:
        for c in cols:
            img = tile.data[:, r : r + window, c : c + window]
            lab = labels.data[0, r : r + window, c : c + window]
            t = tile.transform.window(r, c)
            for aug in augs:
                yield Patch(r, c, aug, flip(img, aug), flip(lab, aug), t)


def write_patches(patches, out_dir: str | Path, split: str, tile_id: str, crs=None,
                  image_nodata=None) -> list[Path]:
    """Write ``patches/{split}/{tile}_{row}_{col}_{aug}.tif`` plus the label twin under ``labels/``."""
    from .raster import write_raster

    root = Path(out_dir) / split
    written = []
    for p in patches:
        name = f"{tile_id}_{p.row}_{p.col}_{p.aug}.tif"
        written.append(write_raster(root / name, RasterGrid(p.image, p.transform, (image_nodata,), crs)))
        write_raster(root / "labels" / name, RasterGrid(p.labels.astype(np.uint8), p.transform, (None,), crs))
    return written


# ---------------------------------------------------------------------------
# spatial generalization
# ---------------------------------------------------------------------------


def generalization_plan(areas: list[str], tiles: list[TileManifest] | None = None) -> list[SplitPlan]:
    """Leave-one-area-out combinations, in the order of ``areas``.

    Combination *i* tests on ``areas[i]`` and trains/validates on the rest.
    With ``tiles`` given, tile ids are distributed accordingly (held-out area
    tiles to ``test``, the rest to ``train``).
    """
    areas = list(areas)
    if len(areas) < 2:
        raise ParameterError("need at least two study areas")
    if len(set(areas)) != len(areas):
        raise ParameterError(f"duplicate study areas in {areas}")
    plans = []
    for i, held in enumerate(areas, start=1):
        rest = [a for a in areas if a != held]
        plan = SplitPlan(name=f"Combination {i}", train_areas=rest, test_areas=[held])
        if tiles is not None:
            plan.test = sorted(t.tile_id for t in tiles if t.study_area == held)
            plan.train = sorted(t.tile_id for t in tiles if t.study_area in rest)
        plans.append(plan)
    return plans


__all__ = [
    "STUDY_AREAS",
    "TileManifest",
    "SplitPlan",
    "tile_distribution",
    "aggregate_fractions",
    "select_validation_test",
    "window_origins",
    "extract_patches_augmented",
    "generalization_plan",
]

"""End-to-end run: mask -> polygons -> descriptors -> classes -> label raster."""

from __future__ import annotations

import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml

from .classify import TofFeature, class_counts, classify_feature
from .errors import ConfigError, DegenerateGeometryError, DegenerateInputError, ParameterError, PipelineError, TofmapError
from .geojson import write_features
from .geometry import shape_descriptors
from .mask import KMEANS_SCOPES, MaskParams, build_woody_mask, collect_mask_ndvi, kmeans_1d_two
from .raster import RasterGrid, read_raster, resample_nearest, write_mask, write_raster
from .rasterize import rasterize_polygons
from .vectorize import DEFAULT_DP_TOLERANCE, DEFAULT_MIN_HOLE_AREA, vectorize_mask

logger = logging.getLogger(__name__)

THREADS_ENV = "TOFMAP_THREADS"


@dataclass
class PipelineConfig:
    ndsm: str | None = None
    dop: str | None = None
    labels: str | None = None
    patches: str | None = None
    out_dir: str = "tofmap_out"
    pixel_size: float = 0.2
    mask: MaskParams = field(default_factory=MaskParams)
    kmeans_scope: str = "area"
    kmeans_tile_size: int | None = None
    dp_tolerance: float = DEFAULT_DP_TOLERANCE
    min_hole_area: float = DEFAULT_MIN_HOLE_AREA
    linear_first: bool = False
    rasterize_simplified: bool = False
    split_seed: int = 0
    window: int = 1024
    stride: int = 128
    workers: int = 1

    def __post_init__(self):
        if isinstance(self.mask, dict):
            self.mask = _mask_params(self.mask)
        self.validate()

    def validate(self) -> None:
        if self.kmeans_scope not in KMEANS_SCOPES:
            raise ConfigError(f"kmeans_scope must be one of {KMEANS_SCOPES}, got {self.kmeans_scope!r}")
        if self.kmeans_tile_size is not None and self.kmeans_tile_size < 1:
            raise ConfigError("kmeans_tile_size must be >= 1")
        if not self.pixel_size > 0:
            raise ConfigError("pixel_size must be > 0")
        if self.dp_tolerance < 0 or self.min_hole_area < 0:
            raise ConfigError("dp_tolerance and min_hole_area must be >= 0")
        if self.window < 1 or self.stride < 1 or self.stride > self.window:
            raise ConfigError(f"need 1 <= stride <= window, got stride {self.stride}, window {self.window}")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mask"]["closing_window"] = list(self.mask.closing_window)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def updated(self, **overrides) -> "PipelineConfig":
        """Copy with the non-None overrides applied (``mask_*`` keys go to the mask params)."""
        d = self.to_dict()
        for k, v in overrides.items():
            if v is None:
                continue
            if k.startswith("mask_"):
                d["mask"][k[len("mask_"):]] = v
            else:
                d[k] = v
        return PipelineConfig.from_dict(d)


def _mask_params(d: dict) -> MaskParams:
    try:
        return MaskParams(**d)
    except TypeError as exc:
        raise ConfigError(f"bad mask parameters: {exc}") from exc
    except ParameterError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: str | Path) -> PipelineConfig:
    """Read a YAML (or JSON) config file."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    d = yaml.safe_load(path.read_text()) or {}
    if not isinstance(d, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return PipelineConfig.from_dict(d)


def save_config(config: PipelineConfig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(yaml.safe_dump(config.to_dict(), sort_keys=False))
    return path


def worker_count(requested: int = 1) -> int:
    cap = os.environ.get(THREADS_ENV)
    if cap:
        try:
            return max(1, min(requested, int(cap)))
        except ValueError:
            raise ConfigError(f"{THREADS_ENV} must be an integer, got {cap!r}") from None
    return max(1, requested)


# ---------------------------------------------------------------------------
# core
# ---------------------------------------------------------------------------


def classify_vectors(vfeatures, linear_first: bool = False) -> list[TofFeature]:
    """Descriptors and classes for vectorized components.

    Descriptors come from the simplified outline; when simplification left a
    degenerate outline the traced one is measured instead.
    """
    out = []
    for vf in vfeatures:
        try:
            d = shape_descriptors(vf.geometry)
        except DegenerateGeometryError:
            d = shape_descriptors(vf.traced)
        out.append(
            TofFeature(vf.id, vf.geometry, d, classify_feature(d, linear_first), {"pixel_count": vf.pixel_count})
        )
    return out


def process_scene(ndsm: RasterGrid, dop: RasterGrid, config: PipelineConfig, kmeans=None, workers: int = 1):
    """In-memory pipeline for one co-registered raster pair.

    Returns ``(mask, features, labels, timings)``; ``labels`` is a uint8 array.
    Each stage's exceptions are re-raised as ``PipelineError`` carrying the
    stage name.
    """
    timings: dict[str, float] = {}
    stage = "build-mask"

    def tick(name, t0):
        timings[name] = timings.get(name, 0.0) + time.perf_counter() - t0

    try:
        t0 = time.perf_counter()
        mask = build_woody_mask(ndsm, dop, config.mask, config.kmeans_scope, config.kmeans_tile_size, kmeans)
        tick(stage, t0)

        stage = "vectorize"
        t0 = time.perf_counter()
        vfeats = vectorize_mask(mask, config.dp_tolerance, config.min_hole_area, workers)
        tick(stage, t0)

        stage = "classify"
        t0 = time.perf_counter()
        feats = classify_vectors(vfeats, config.linear_first)
        tick(stage, t0)

        stage = "rasterize"
        t0 = time.perf_counter()
        if config.rasterize_simplified:
            polys = [(f.geometry, int(f.tof_class)) for f in feats]
        else:
            polys = [(vf.traced, int(f.tof_class)) for vf, f in zip(vfeats, feats)]
        labels = rasterize_polygons(polys, mask.shape, mask.transform)
        tick(stage, t0)
    except PipelineError:
        raise
    except Exception as exc:
        raise PipelineError(stage, exc, {}) from exc
    return mask, feats, labels, timings


def _pairs(config: PipelineConfig) -> list[tuple[str, Path, Path]]:
    if not config.ndsm:
        raise ConfigError("no nDSM path given")
    if not config.dop:
        raise ConfigError("no orthophoto path given")
    ndsm, dop = Path(config.ndsm), Path(config.dop)
    if not ndsm.exists():
        raise ConfigError(f"nDSM not found: {ndsm}")
    if not dop.exists():
        raise ConfigError(f"orthophoto not found: {dop}")
    if ndsm.is_dir() != dop.is_dir():
        raise ConfigError("nDSM and orthophoto must both be files or both be directories")
    if not ndsm.is_dir():
        return [(ndsm.stem, ndsm, dop)]
    pairs = []
    for p in sorted(ndsm.glob("*.tif")):
        q = dop / p.name
        if not q.is_file():
            raise ConfigError(f"no orthophoto tile for {p.name} in {dop}")
        pairs.append((p.stem, p, q))
    if not pairs:
        raise ConfigError(f"no .tif tiles in {ndsm}")
    return pairs


def _load(path: Path, pixel_size: float) -> RasterGrid:
    return resample_nearest(read_raster(path), pixel_size)


def run_pipeline(config: PipelineConfig) -> dict:
    """Run every stage on the configured inputs and write the outputs.

    Inputs are a single nDSM/orthophoto pair or two directories of tiles
    paired by file name. Per tile the run writes ``mask.tif``,
    ``tof.geojson`` and ``labels.tif`` (into ``out_dir/<tile>/`` when tiled)
    and finally ``run_report.json`` in ``out_dir``. Returns the report.
    """
    config.validate()
    pairs = _pairs(config)
    out_root = Path(config.out_dir)
    out_root.mkdir(parents=True, exist_ok=True)
    workers = worker_count(config.workers)
    tiled = len(pairs) > 1 or Path(config.ndsm).is_dir()
    artifacts: dict[str, str] = {}
    t_start = time.perf_counter()

    kmeans = None
    timings: dict[str, float] = {}
    if config.kmeans_scope == "area" and tiled:
        t0 = time.perf_counter()
        try:
            values = [
                collect_mask_ndvi(_load(n, config.pixel_size), _load(d, config.pixel_size), config.mask)
                for _, n, d in pairs
            ]
            kmeans = kmeans_1d_two(np.concatenate(values), config.mask.kmeans_max_iter, config.mask.kmeans_tol)
        except DegenerateInputError:
            kmeans = None
        except Exception as exc:
            raise PipelineError("kmeans-fit", exc, artifacts) from exc
        timings["kmeans-fit"] = time.perf_counter() - t0

    def one(item):
        name, ndsm_path, dop_path = item
        out = out_root / name if tiled else out_root
        done: dict[str, str] = {}
        key = f"{name}/" if tiled else ""
        try:
            t0 = time.perf_counter()
            ndsm = _load(ndsm_path, config.pixel_size)
            dop = _load(dop_path, config.pixel_size)
            read_s = time.perf_counter() - t0
        except Exception as exc:
            raise PipelineError("read", exc, done) from exc
        inner = 1 if tiled else workers
        try:
            mask, feats, labels, t = process_scene(ndsm, dop, config, kmeans, inner)
        except PipelineError as exc:
            raise PipelineError(exc.stage, exc.cause, done) from exc.cause
        t["read"] = read_s
        stage = "write"
        try:
            done[key + "mask"] = str(write_mask(out / "mask.tif", mask))
            done[key + "geojson"] = str(write_features(out / "tof.geojson", feats, ndsm.crs, name))
            done[key + "labels"] = str(
                write_raster(out / "labels.tif", RasterGrid(labels, ndsm.transform, (None,), ndsm.crs))
            )
        except Exception as exc:
            raise PipelineError(stage, exc, done) from exc
        return name, {
            "features": len(feats),
            "class_counts": class_counts(feats),
            "mask_pixels": mask.count(),
            "timings_s": t,
            "artifacts": done,
        }

    results = []
    try:
        if tiled and workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                futures = [pool.submit(one, p) for p in pairs]
            # the pool has drained, so every finished tile is collected before re-raising
            failed = None
            for fut in futures:
                if fut.exception() is None:
                    results.append(fut.result())
                elif failed is None:
                    failed = fut.exception()
            if failed is not None:
                raise failed
        else:
            for p in pairs:
                results.append(one(p))
    except PipelineError as exc:
        for _, r in results:
            artifacts.update(r["artifacts"])
        artifacts.update(exc.artifacts)
        raise PipelineError(exc.stage, exc.cause, artifacts) from exc.cause

    totals = {k: 0 for k in ("Forest", "Patch", "Linear", "Tree")}
    for _, r in results:
        for k, v in r["class_counts"].items():
            totals[k] += v
        for k, v in r["timings_s"].items():
            timings[k] = timings.get(k, 0.0) + v
    report = {
        "config": config.to_dict(),
        "tiles": dict(results),
        "features": sum(r["features"] for _, r in results),
        "class_counts": totals,
        "timings_s": timings,
        "total_s": time.perf_counter() - t_start,
    }
    if kmeans is not None:
        report["kmeans"] = {"centers": kmeans.centers.tolist(), "boundary": kmeans.boundary}
    report_path = out_root / "run_report.json"
    report_path.write_text(json.dumps(report, indent=2))
    report["report_path"] = str(report_path)
    logger.info("pipeline finished: %d features %s", report["features"], totals)
    return report


__all__ = ["PipelineConfig", "load_config", "save_config", "run_pipeline", "process_scene", "TofmapError"]

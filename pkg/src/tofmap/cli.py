"""Command-line entry point: ``tofmap <subcommand> ...``.

Every subcommand exits 0 on success. Failures exit nonzero and print a
JSON object ``{"error": <code>, "message": ...}`` on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import yaml

from .classify import TofFeature, classify_layer
from .errors import DataError, ParameterError, TofmapError
from .evaluate import ConfusionMatrix, evaluate_groups, write_normalized_csv, write_report_csv, write_report_json
from .fixtures import four_shape_scene, generate_fixture
from .geojson import read_features, write_features
from .mask import MaskParams, build_woody_mask
from .merge import SoftmaxAccumulator, accumulate_patch, finalize, grid_origins, load_patch_dir
from .pipeline import PipelineConfig, load_config, run_pipeline
from .raster import GeoTransform, RasterGrid, read_mask, read_raster, resample_nearest, write_mask, write_raster
from .splits import (
    extract_patches_augmented,
    generalization_plan,
    infer_study_area,
    manifest_from_labels,
    read_manifest,
    select_validation_test,
    write_manifest,
    write_patches,
)
from .vectorize import DEFAULT_DP_TOLERANCE, DEFAULT_MIN_HOLE_AREA, vectorize_mask

logger = logging.getLogger("tofmap")


class _JsonErrorParser(argparse.ArgumentParser):
    """Argument errors are reported as JSON like every other failure."""

    def error(self, message):
        sys.stderr.write(json.dumps({"error": "usage_error", "message": message}) + "\n")
        self.exit(2)


def _pair(text: str) -> tuple[int, int]:
    try:
        a, b = text.lower().split("x")
        return int(a), int(b)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected <rows>x<cols>, got {text!r}") from None


def _tifs(path: str) -> list[Path]:
    p = Path(path)
    if p.is_dir():
        files = sorted(p.glob("*.tif"))
        if not files:
            raise DataError(f"no .tif files in {p}")
        return files
    if not p.is_file():
        raise DataError(f"not found: {p}")
    return [p]


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_build_mask(args) -> dict:
    params = MaskParams(height_threshold=args.height_threshold, closing_window=args.closing)
    ndsm = resample_nearest(read_raster(args.ndsm), args.pixel_size)
    dop = resample_nearest(read_raster(args.dop), args.pixel_size)
    mask = build_woody_mask(ndsm, dop, params, args.kmeans_scope, args.tile_size)
    write_mask(args.out, mask)
    return {"out": args.out, "mask_pixels": mask.count()}


def cmd_vectorize(args) -> dict:
    mask = read_mask(args.mask)
    feats = vectorize_mask(mask, args.tolerance, args.min_hole_area, _threads(args))
    out = [TofFeature(f.id, f.geometry, properties={"pixel_count": f.pixel_count}) for f in feats]
    write_features(args.out, out, mask.crs, Path(args.mask).stem)
    return {"out": args.out, "features": len(out)}


def cmd_classify(args) -> dict:
    feats, crs = read_features(args.input)
    classified = classify_layer(feats, args.linear_first)
    write_features(args.out, classified, crs, Path(args.input).stem)
    counts: dict[str, int] = {}
    for f in classified:
        counts[f.tof_class.label] = counts.get(f.tof_class.label, 0) + 1
    return {"out": args.out, "features": len(classified), "class_counts": counts}


def cmd_split(args) -> dict:
    if args.generalization:
        areas = [a.strip() for a in args.generalization.split(",") if a.strip()]
        tiles = read_manifest(args.manifest) if args.manifest else None
        plans = generalization_plan(areas, tiles)
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(json.dumps([p.to_dict() for p in plans], indent=2))
        return {"out": args.out, "combinations": len(plans)}
    if args.manifest:
        tiles = read_manifest(args.manifest)
    elif args.labels_dir:
        tiles = manifest_from_labels(_tifs(args.labels_dir))
        if args.write_manifest:
            write_manifest(args.write_manifest, tiles)
    else:
        raise ParameterError("split needs --manifest or --labels-dir")
    plan = select_validation_test(
        tiles, seed=args.seed, max_deviation=args.max_deviation, max_attempts=args.attempts, scope=args.scope
    )
    plan.save(args.out)
    return {"out": args.out, "max_deviation_pp": plan.max_deviation_pp,
            "train": len(plan.train), "val": len(plan.val), "test": len(plan.test)}


def cmd_extract_patches(args) -> dict:
    image = read_raster(args.image)
    labels = read_raster(args.labels)
    tile_id = args.tile_id or Path(args.image).stem
    augment = args.split == "train" and not args.no_augment
    patches = extract_patches_augmented(image, labels, args.window, args.stride, augment)
    written = write_patches(patches, args.out_dir, args.split, tile_id, image.crs, image.nodata[0])
    return {"out_dir": args.out_dir, "patches": len(written)}


def cmd_merge(args) -> dict:
    rows, cols = args.extent
    acc = SoftmaxAccumulator(rows, cols, vote=args.vote)
    expected = set(grid_origins((rows, cols), args.window, args.stride)) if args.stride else None
    n = 0
    for p in load_patch_dir(args.patches):
        if expected is not None and tuple(p.origin) not in expected:
            raise DataError(f"patch origin {p.origin} is not on the {args.window}/{args.stride} grid")
        accumulate_patch(acc, p)
        n += 1
    labels, mean = finalize(acc)
    if args.like:
        ref = read_raster(args.like)
        transform, crs = ref.transform, ref.crs
    else:
        transform, crs = GeoTransform(0.0, 0.0), None
    write_raster(args.out, RasterGrid(labels, transform, (None,), crs))
    result = {"out": args.out, "patches": n}
    if args.probs_out:
        write_raster(args.probs_out, RasterGrid(mean.astype(np.float32), transform, (None,), crs))
        result["probs_out"] = args.probs_out
    return result


def cmd_eval(args) -> dict:
    gts = _tifs(args.gt)
    preds = _tifs(args.pred)
    if len(gts) == 1 and len(preds) == 1:
        pairs = [(gts[0].stem, gts[0], preds[0])]
    else:
        by_name = {p.name: p for p in preds}
        missing = [g.name for g in gts if g.name not in by_name]
        if missing:
            raise DataError(f"no prediction for {missing}")
        pairs = [(g.stem, g, by_name[g.name]) for g in gts]
    group_of = infer_study_area if args.group_by == "study_area" else None
    result = evaluate_groups(
        ((name, read_raster(g).data[0], read_raster(p).data[0]) for name, g, p in pairs), group_of
    )
    write_report_json(args.out, result)
    out = {"out": args.out, "mIoU": result["pooled"]["mIoU"], "mF1": result["pooled"]["mF1"]}
    if args.csv:
        write_report_csv(args.csv, result)
        out["csv"] = args.csv
    if args.matrix_csv:
        write_normalized_csv(args.matrix_csv, ConfusionMatrix(np.array(result["confusion"])))
        out["matrix_csv"] = args.matrix_csv
    return out


def cmd_fixture(args) -> dict:
    if args.scene:
        scene = yaml.safe_load(Path(args.scene).read_text()) or {}
    else:
        scene = four_shape_scene()
    if args.noise is not None:
        scene["ndvi_noise"] = args.noise
    ndsm, dop, labels, meta = generate_fixture(scene, args.seed)
    out = Path(args.out_dir)
    write_raster(out / "ndsm.tif", ndsm)
    write_raster(out / "dop.tif", dop)
    write_raster(out / "labels.tif", labels)
    (out / "fixture.json").write_text(json.dumps(meta, indent=2))
    return {"out_dir": str(out), "shapes": len(meta["shapes"]), "overlaps": meta["overlaps"]}


def cmd_run(args) -> dict:
    config = load_config(args.config) if args.config else PipelineConfig()
    config = config.updated(
        ndsm=args.ndsm,
        dop=args.dop,
        out_dir=args.out_dir,
        pixel_size=args.pixel_size,
        kmeans_scope=args.kmeans_scope,
        kmeans_tile_size=args.tile_size,
        dp_tolerance=args.tolerance,
        min_hole_area=args.min_hole_area,
        linear_first=args.linear_first,
        rasterize_simplified=args.rasterize_simplified,
        workers=args.workers,
        mask_height_threshold=args.height_threshold,
        mask_closing_window=list(args.closing) if args.closing else None,
    )
    report = run_pipeline(config)
    return {"report": report["report_path"], "features": report["features"], "class_counts": report["class_counts"]}


def _threads(args) -> int:
    from .pipeline import worker_count

    return worker_count(getattr(args, "workers", 1) or 1)


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _JsonErrorParser(prog="tofmap", description="Woody vegetation mapping tools")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_JsonErrorParser)

    p = sub.add_parser("build-mask", help="woody-vegetation mask from nDSM and orthophoto")
    p.add_argument("--ndsm", required=True)
    p.add_argument("--dop", required=True)
    p.add_argument("--height-threshold", type=float, default=3.0)
    p.add_argument("--closing", type=_pair, default=(5, 5), help="structuring element, e.g. 5x5")
    p.add_argument("--kmeans-scope", choices=["area", "tile"], default="area")
    p.add_argument("--tile-size", type=int, default=None, help="block size for --kmeans-scope tile")
    p.add_argument("--pixel-size", type=float, default=0.2)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_mask)

    p = sub.add_parser("vectorize", help="mask GeoTIFF to simplified polygons")
    p.add_argument("--mask", required=True)
    p.add_argument("--tolerance", type=float, default=DEFAULT_DP_TOLERANCE, help="Douglas-Peucker tolerance (m)")
    p.add_argument("--min-hole-area", type=float, default=DEFAULT_MIN_HOLE_AREA, help="m²")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_vectorize)

    p = sub.add_parser("classify", help="assign Forest/Patch/Linear/Tree to polygons")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--linear-first", action="store_true", help="test elongation before the size rule")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("split", help="select validation/test tiles or build area hold-out plans")
    p.add_argument("--manifest", help="tile fraction CSV")
    p.add_argument("--labels-dir", help="directory of label GeoTIFFs to build the manifest from")
    p.add_argument("--write-manifest", help="where to save the manifest built from --labels-dir")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-deviation", type=float, default=1.0, help="percentage points")
    p.add_argument("--attempts", type=int, default=100_000)
    p.add_argument("--scope", choices=["area", "global"], default="area")
    p.add_argument("--generalization", help="comma-separated areas; writes leave-one-area-out plans")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("extract-patches", help="cut a tile into (augmented) training patches")
    p.add_argument("--image", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--split", choices=["train", "val", "test"], default="train")
    p.add_argument("--tile-id")
    p.add_argument("--window", type=int, default=1024)
    p.add_argument("--stride", type=int, default=None)
    p.add_argument("--no-augment", action="store_true")
    p.add_argument("--out-dir", default="patches")
    p.set_defaults(func=cmd_extract_patches)

    p = sub.add_parser("merge", help="merge overlapping softmax patches into a label map")
    p.add_argument("--patches", required=True, help="sidecar directory or .npz container")
    p.add_argument("--extent", type=_pair, required=True, help="e.g. 5000x5000")
    p.add_argument("--window", type=int, default=1024)
    p.add_argument("--stride", type=int, default=None, help="check patch origins against this grid")
    p.add_argument("--vote", choices=["soft", "hard"], default="soft")
    p.add_argument("--like", help="raster to copy georeferencing from")
    p.add_argument("--probs-out", help="optional mean-probability GeoTIFF")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_merge)

    p = sub.add_parser("eval", help="pixel-wise accuracy assessment")
    p.add_argument("--gt", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--group-by", choices=["study_area", "none"], default="none")
    p.add_argument("--csv")
    p.add_argument("--matrix-csv")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("fixture", help="render a synthetic scene")
    p.add_argument("--scene", help="scene YAML/JSON; default is the four-shape scene")
    p.add_argument("--noise", type=float, default=None, help="NDVI noise sigma")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_fixture)

    # run: flags default to None so that only explicit ones override the config file
    p = sub.add_parser("run", help="full mask-to-labels pipeline")
    p.add_argument("--config")
    p.add_argument("--ndsm")
    p.add_argument("--dop")
    p.add_argument("--out-dir")
    p.add_argument("--pixel-size", type=float)
    p.add_argument("--height-threshold", type=float)
    p.add_argument("--closing", type=_pair)
    p.add_argument("--kmeans-scope", choices=["area", "tile"])
    p.add_argument("--tile-size", type=int)
    p.add_argument("--tolerance", type=float)
    p.add_argument("--min-hole-area", type=float)
    p.add_argument("--linear-first", action="store_true", default=None)
    p.add_argument("--rasterize-simplified", action="store_true", default=None)
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_run)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        result = args.func(args)
    except TofmapError as exc:
        sys.stderr.write(json.dumps(exc.to_dict()) + "\n")
        return 1
    except (OSError, ValueError) as exc:
        sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n")
        return 1
    print(json.dumps(result))
    return 0


if __name__ == "__main__":
    sys.exit(main())

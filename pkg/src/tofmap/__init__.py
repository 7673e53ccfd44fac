"""Woody vegetation mapping outside forests: masks, polygons, classes, splits, merging, metrics."""

from __future__ import annotations

from .classify import TofClass, TofFeature, classify_feature, classify_layer
from .errors import TofmapError
from .evaluate import ConfusionMatrix, accumulate_confusion, macro_summary, normalized_matrix, per_class_metrics
from .fixtures import four_shape_scene, generate_fixture
from .geometry import ShapeDescriptors, min_rotated_rect, shape_descriptors
from .mask import MaskParams, build_woody_mask, kmeans_1d_two, morphological_close
from .merge import SoftmaxAccumulator, SoftmaxPatch, finalize, merge_patches, sliding_window_predict
from .pipeline import PipelineConfig, load_config, run_pipeline
from .raster import BinaryMask, GeoTransform, RasterGrid, compute_ndvi, read_raster, write_raster
from .splits import TileManifest, SplitPlan, generalization_plan, select_validation_test, window_origins
from .vectorize import PolygonGeom, extract_components, polygonize, simplify_dp, vectorize_mask

__version__ = "0.1.0"

__all__ = [
    "TofClass",
    "TofFeature",
    "classify_feature",
    "classify_layer",
    "TofmapError",
    "ShapeDescriptors",
    "min_rotated_rect",
    "shape_descriptors",
    "MaskParams",
    "build_woody_mask",
    "kmeans_1d_two",
    "morphological_close",
    "BinaryMask",
    "GeoTransform",
    "RasterGrid",
    "compute_ndvi",
    "read_raster",
    "write_raster",
    "PolygonGeom",
    "extract_components",
    "polygonize",
    "simplify_dp",
    "vectorize_mask",
    "ConfusionMatrix",
    "accumulate_confusion",
    "macro_summary",
    "normalized_matrix",
    "per_class_metrics",
    "four_shape_scene",
    "generate_fixture",
    "SoftmaxAccumulator",
    "SoftmaxPatch",
    "finalize",
    "merge_patches",
    "sliding_window_predict",
    "PipelineConfig",
    "load_config",
    "run_pipeline",
    "TileManifest",
    "SplitPlan",
    "generalization_plan",
    "select_validation_test",
    "window_origins",
]

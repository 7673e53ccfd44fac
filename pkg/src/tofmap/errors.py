"""Exception hierarchy shared by all tofmap stages."""

from __future__ import annotations


class TofmapError(Exception):
    """Base class for every error raised by tofmap."""

    code = "tofmap_error"

    def to_dict(self) -> dict:
        return {"error": self.code, "message": str(self)}


class ParameterError(TofmapError, ValueError):
    code = "parameter_error"


class AlignmentError(TofmapError, ValueError):
    """Rasters that should share a grid do not."""

    code = "alignment_error"


class MissingBandError(TofmapError, ValueError):
    code = "missing_band"


class ShapeError(TofmapError, ValueError):
    code = "shape_error"


class DataError(TofmapError, ValueError):
    code = "data_error"


class DegenerateInputError(TofmapError, ValueError):
    """Clustering input has fewer than two distinct values."""

    code = "degenerate_input"


class DegenerateGeometryError(TofmapError, ValueError):
    code = "degenerate_geometry"

    def __init__(self, message: str, feature_id=None):
        super().__init__(message if feature_id is None else f"feature {feature_id}: {message}")
        self.feature_id = feature_id


class SplitInfeasibleError(TofmapError):
    """No tile subset met the class-proportion constraint within the attempt budget."""

    code = "constraint_infeasible"

    def __init__(self, message: str, best_deviation: float):
        super().__init__(f"{message} (best deviation {best_deviation:.3f} pp)")
        self.best_deviation = best_deviation

    def to_dict(self) -> dict:
        d = super().to_dict()
        d["best_deviation_pp"] = self.best_deviation
        return d


class BoundsError(TofmapError, IndexError):
    code = "bounds_error"


class ValidationError(TofmapError, ValueError):
    code = "validation_error"


class IncompleteCoverageError(TofmapError):
    code = "incomplete_coverage"

    def __init__(self, n_missing: int):
        super().__init__(f"{n_missing} pixels are not covered by any window")
        self.n_missing = n_missing


class EmptyInputError(TofmapError, ValueError):
    code = "empty_input"


class ConfigError(TofmapError):
    code = "config_error"


class PipelineError(TofmapError):
    """A pipeline stage failed; completed artifacts are kept on disk."""

    code = "stage_failed"

    def __init__(self, stage: str, cause: Exception, artifacts: dict[str, str]):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
        self.artifacts = dict(artifacts)

    def to_dict(self) -> dict:
        d = super().to_dict()
        d.update(stage=self.stage, artifacts=self.artifacts)
        if isinstance(self.cause, TofmapError):
            d["cause"] = self.cause.code
        return d

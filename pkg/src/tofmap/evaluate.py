"""Pixel-wise accuracy assessment: confusion matrix, per-class metrics, error matrix."""

from __future__ import annotations

import csv
import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .classify import CLASS_NAMES, WOODY_CLASSES
from .errors import DataError, EmptyInputError, ShapeError

logger = logging.getLogger(__name__)

N_CLASSES = 5


@dataclass
class ConfusionMatrix:
    """Counts with rows = ground truth, columns = prediction, classes 0-4."""

    counts: np.ndarray = field(default_factory=lambda: np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64))

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.shape != (N_CLASSES, N_CLASSES):
            raise ShapeError(f"confusion matrix must be {N_CLASSES}x{N_CLASSES}, got {self.counts.shape}")
        if (self.counts < 0).any():
            raise DataError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def update(self, gt, pred) -> "ConfusionMatrix":
        return accumulate_confusion(gt, pred, self)

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.counts + other.counts)

    def to_list(self) -> list:
        return self.counts.tolist()


def _codes(arr, what: str) -> np.ndarray:
    a = np.asarray(getattr(arr, "data", arr))
    if a.ndim == 3:
        a = a[0]
    if a.size and (a.min() < 0 or a.max() >= N_CLASSES):
        raise DataError(f"{what} contains codes outside 0-{N_CLASSES - 1}")
    return a.astype(np.int64, copy=False)


def accumulate_confusion(gt, pred, cm: ConfusionMatrix | None = None) -> ConfusionMatrix:
    """Add the pixel pairs of one tile to ``cm`` (a new matrix when omitted)."""
    cm = cm if cm is not None else ConfusionMatrix()
    g = _codes(gt, "ground truth")
    p = _codes(pred, "prediction")
    if g.shape != p.shape:
        raise ShapeError(f"ground truth {g.shape} and prediction {p.shape} differ in shape")
    flat = np.bincount((g * N_CLASSES + p).ravel(), minlength=N_CLASSES * N_CLASSES)
    cm.counts += flat.reshape(N_CLASSES, N_CLASSES)
    return cm


@dataclass
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    iou: float
    support: int


@dataclass
class MetricsReport:
    per_class: dict[str, ClassMetrics]

    def to_dict(self) -> dict:
        miou, mf1 = macro_summary(self)
        return {
            "per_class": {k: vars(v) for k, v in self.per_class.items()},
            "mIoU": miou,
            "mF1": mf1,
        }


def _ratio(num: float, den: float) -> float:
    return num / den if den > 0 else 0.0


def per_class_metrics(cm: ConfusionMatrix) -> MetricsReport:
    """Precision, recall, F1 and IoU per class; any zero denominator gives 0."""
    if cm.total == 0:
        raise EmptyInputError("confusion matrix is empty")
    c = cm.counts
    out = {}
    for k, name in enumerate(CLASS_NAMES):
        tp = int(c[k, k])
        fp = int(c[:, k].sum()) - tp
        fn = int(c[k, :].sum()) - tp
        p = _ratio(tp, tp + fp)
        r = _ratio(tp, tp + fn)
        out[name] = ClassMetrics(p, r, _ratio(2 * p * r, p + r), _ratio(tp, tp + fp + fn), tp + fn)
    return MetricsReport(out)


def macro_summary(report: MetricsReport | dict) -> tuple[float, float]:
    """Unweighted mean IoU and F1 over the four woody classes (Background excluded).

    ``report`` may also be a mapping ``name -> {"iou": .., "f1": ..}``.
    """
    per = report.per_class if isinstance(report, MetricsReport) else report
    ious, f1s = [], []
    for c in WOODY_CLASSES:
        m = per[c.label]
        ious.append(m["iou"] if isinstance(m, dict) else m.iou)
        f1s.append(m["f1"] if isinstance(m, dict) else m.f1)
    return float(np.mean(ious)), float(np.mean(f1s))


def _largest_remainder(row: np.ndarray, decimals: int) -> np.ndarray:
    """Round a row of percentages so the rounded values still add up to exactly 100."""
    scale = 10**decimals
    units = row * scale
    base = np.floor(units)
    short = int(round(100 * scale - base.sum()))
    if short > 0:
        order = np.argsort(-(units - base), kind="stable")
        base[order[:short]] += 1
    return base / scale


def normalized_matrix(cm: ConfusionMatrix | np.ndarray, decimals: int | None = None) -> np.ndarray:
    """Row percentages of the matrix.

    With ``decimals`` set, rows are rounded by largest remainder so they
    still sum to 100 exactly at that precision. Empty rows stay all-zero
    and raise a warning.
    """
    c = np.asarray(getattr(cm, "counts", cm), dtype=np.float64)
    sums = c.sum(axis=1)
    empty = sums == 0
    if empty.any():
        warnings.warn(f"ground-truth rows {np.nonzero(empty)[0].tolist()} are empty; reported as zeros", stacklevel=2)
    out = np.zeros_like(c)
    out[~empty] = 100.0 * c[~empty] / sums[~empty, None]
    if decimals is not None:
        for i in np.nonzero(~empty)[0]:
            out[i] = _largest_remainder(out[i], decimals)
    return out


# ---------------------------------------------------------------------------
# grouped evaluation and reports
# ---------------------------------------------------------------------------


def evaluate_groups(pairs, group_of=None) -> dict:
    """Evaluate ``(name, gt, pred)`` triples, pooled and per group.

    The headline metrics come from the pooled matrix. ``std`` is the
    population standard deviation of the per-group mIoU/mF1 values.
    """
    groups: dict[str, ConfusionMatrix] = {}
    pooled = ConfusionMatrix()
    for name, gt, pred in pairs:
        key = group_of(name) if group_of else "all"
        cm = accumulate_confusion(gt, pred, groups.setdefault(key, ConfusionMatrix()))
        groups[key] = cm
    for cm in groups.values():
        pooled = pooled + cm
    report = per_class_metrics(pooled)
    result = {
        "pooled": report.to_dict(),
        "confusion": pooled.to_list(),
        "normalized": normalized_matrix(pooled, decimals=2).tolist() if pooled.total else [],
        "groups": {},
    }
    per_group = []
    for key in sorted(groups):
        rep = per_class_metrics(groups[key])
        result["groups"][key] = {**rep.to_dict(), "confusion": groups[key].to_list()}
        per_group.append(macro_summary(rep))
    if len(per_group) > 1:
        arr = np.array(per_group)
        result["std"] = {"mIoU": float(arr[:, 0].std(ddof=0)), "mF1": float(arr[:, 1].std(ddof=0))}
    return result


def write_report_json(path: str | Path, result: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(result, indent=2))
    return path


def write_report_csv(path: str | Path, result: dict) -> Path:
    """One row per class per group, plus the pooled rows under group ``all``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    blocks = [("all", result["pooled"])] + list(result["groups"].items())
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["group", "class", "precision", "recall", "f1", "iou", "support"])
        for key, rep in blocks:
            for name, m in rep["per_class"].items():
                w.writerow([key, name, f"{m['precision']:.6f}", f"{m['recall']:.6f}",
                            f"{m['f1']:.6f}", f"{m['iou']:.6f}", m["support"]])
    return path


def write_normalized_csv(path: str | Path, cm: ConfusionMatrix) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pct = normalized_matrix(cm, decimals=2)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["ground_truth", *CLASS_NAMES])
        for name, row in zip(CLASS_NAMES, pct):
            w.writerow([name, *(f"{v:.2f}" for v in row)])
    return path

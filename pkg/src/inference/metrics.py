"""Evaluation metrics for segmentation, surface normals and edges.

Each metric has an accumulating form (confusion matrix, angular errors,
per-threshold counts) so scores can be computed over a whole dataset rather
than averaged per image.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import pandas as pd

from src.errors import ContractError, ShapeError
from src.heads.losses import IGNORE_LABEL


# ---------------------------------------------------------------------------
# segmentation
# ---------------------------------------------------------------------------

@dataclass
class SegmentationScores:
    """Mean IoU over present classes and mean class recall (AC)."""
    mean_iou: float
    per_class_iou: np.ndarray  # NaN for classes absent from both maps
    mean_accuracy: float
    confusion: np.ndarray  # K x K, rows = ground truth


def confusion_matrix(pred: np.ndarray, gt: np.ndarray, num_classes: int,
                     ignore_label: Optional[int] = IGNORE_LABEL) -> np.ndarray:
    """K x K counts of (ground truth, prediction) over non-ignored pixels."""
    pred = np.asarray(pred).reshape(-1).astype(np.int64)
    gt = np.asarray(gt).reshape(-1).astype(np.int64)
    if pred.shape != gt.shape:
        raise ShapeError(f"prediction has {pred.size} pixels, ground truth {gt.size}")
    keep = gt != ignore_label if ignore_label is not None else np.ones_like(gt, dtype=bool)
    pred, gt = pred[keep], gt[keep]
    if np.any((gt < 0) | (gt >= num_classes)) or np.any((pred < 0) | (pred >= num_classes)):
        raise ContractError(f"labels must lie in [0, {num_classes})")
    return np.bincount(gt * num_classes + pred, minlength=num_classes ** 2).reshape(
        num_classes, num_classes)


def scores_from_confusion(confusion: np.ndarray) -> SegmentationScores:
    tp = np.diag(confusion).astype(np.float64)
    gt_total = confusion.sum(axis=1).astype(np.float64)
    pred_total = confusion.sum(axis=0).astype(np.float64)
    union = gt_total + pred_total - tp
    present = union > 0
    if not present.any():
        raise ContractError("no labeled pixels to score")
    iou = np.full(len(tp), np.nan)
    iou[present] = tp[present] / union[present]
    labeled = gt_total > 0
    recall = tp[labeled] / gt_total[labeled]
    return SegmentationScores(
        mean_iou=float(np.mean(iou[present])),
        per_class_iou=iou,
        mean_accuracy=float(np.mean(recall)) if recall.size else float("nan"),
        confusion=confusion,
    )


def miou_and_accuracy(pred: np.ndarray, gt: np.ndarray, num_classes: int,
                      ignore_label: Optional[int] = IGNORE_LABEL) -> SegmentationScores:
    """Mean intersection-over-union and mean class accuracy of one label map.

    Args:
        pred: Predicted labels [H x W]
        gt: Ground-truth labels [H x W], ``ignore_label`` pixels skipped
        num_classes: K
        ignore_label: Void label

    Returns:
        SegmentationScores; classes absent from both maps do not count
    """
    return scores_from_confusion(confusion_matrix(pred, gt, num_classes, ignore_label))


# ---------------------------------------------------------------------------
# normals
# ---------------------------------------------------------------------------

@dataclass
class NormalStats:
    """Angular error statistics in degrees; pct_* are fractions below each threshold."""
    mean: float
    median: float
    rmse: float
    pct_11_25: float
    pct_22_5: float
    pct_30: float
    count: int = 0

    def as_dict(self) -> dict:
        return {"mean": self.mean, "median": self.median, "rmse": self.rmse,
                "pct_11_25": self.pct_11_25, "pct_22_5": self.pct_22_5, "pct_30": self.pct_30}


def _as_rows(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.ndim == 3 and v.shape[0] == 3:
        return v.reshape(3, -1).T
    if v.ndim == 2 and v.shape[1] == 3:
        return v
    raise ShapeError(f"normals must be 3 x H x W or P x 3, got {v.shape}")


def angular_errors(pred: np.ndarray, gt: np.ndarray, mask: Optional[np.ndarray] = None) -> np.ndarray:
    """Per-pixel angle in degrees between predicted and true normals.

    Predictions are normalized first; a zero-length prediction scores 90.
    """
    p, g = _as_rows(pred), _as_rows(gt)
    if p.shape != g.shape:
        raise ShapeError(f"normal maps differ in size: {p.shape} vs {g.shape}")
    if mask is not None:
        keep = np.asarray(mask, dtype=bool).reshape(-1)
        p, g = p[keep], g[keep]
    norms = np.linalg.norm(p, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    cos = np.clip((p * g).sum(axis=1) / safe / np.linalg.norm(g, axis=1), -1.0, 1.0)
    errors = np.degrees(np.arccos(cos))
    errors[norms == 0] = 90.0
    return errors


def stats_from_errors(errors: np.ndarray) -> NormalStats:
    errors = np.asarray(errors, dtype=np.float64).reshape(-1)
    if errors.size == 0:
        raise ContractError("no valid pixels to score")
    ordered = np.sort(errors)
    return NormalStats(
        mean=float(errors.mean()),
        median=float(ordered[(len(ordered) - 1) // 2]),  # lower middle for even counts
        rmse=float(np.sqrt(np.mean(errors ** 2))),
        pct_11_25=float(np.mean(errors < 11.25)),
        pct_22_5=float(np.mean(errors < 22.5)),
        pct_30=float(np.mean(errors < 30.0)),
        count=int(errors.size),
    )


def normal_stats(pred: np.ndarray, gt: np.ndarray, mask: Optional[np.ndarray] = None) -> NormalStats:
    """Angular error summary of predicted against true normals."""
    return stats_from_errors(angular_errors(pred, gt, mask))


# ---------------------------------------------------------------------------
# edges
# ---------------------------------------------------------------------------

@dataclass
class EdgeReport:
    """Precision/recall sweep and its best F-measure (fixed dataset-wide threshold)."""
    best_f: float
    best_threshold: float
    thresholds: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    f: np.ndarray
    no_positives: bool = False

    def curve(self) -> pd.DataFrame:
        return pd.DataFrame({"threshold": self.thresholds, "precision": self.precision,
                             "recall": self.recall, "f": self.f})


@dataclass
class EdgeCounts:
    """Per-threshold TP/FP/FN, additive across images."""
    thresholds: np.ndarray
    tp: np.ndarray = field(default=None)
    fp: np.ndarray = field(default=None)
    fn: np.ndarray = field(default=None)

    def __post_init__(self):
        n = len(self.thresholds)
        for name in ("tp", "fp", "fn"):
            if getattr(self, name) is None:
                setattr(self, name, np.zeros(n, dtype=np.int64))

    def add(self, prob: np.ndarray, gt: np.ndarray) -> "EdgeCounts":
        prob = np.asarray(prob, dtype=np.float64).reshape(-1)
        truth = np.asarray(gt).reshape(-1) > 0
        if prob.shape != truth.shape:
            raise ShapeError(f"probability map has {prob.size} pixels, ground truth {truth.size}")
        # predicted positive at threshold t when prob >= t
        ranked = np.sort(prob)
        pos_ranked = np.sort(prob[truth])
        predicted = len(ranked) - np.searchsorted(ranked, self.thresholds, side="left")
        hits = len(pos_ranked) - np.searchsorted(pos_ranked, self.thresholds, side="left")
        self.tp += hits
        self.fp += predicted - hits
        self.fn += len(pos_ranked) - hits
        return self

    def report(self) -> EdgeReport:
        tp, fp, fn = (a.astype(np.float64) for a in (self.tp, self.fp, self.fn))
        positives = tp + fn
        no_positives = bool(positives[0] == 0)
        with np.errstate(divide="ignore", invalid="ignore"):
            precision = np.where(tp + fp > 0, tp / (tp + fp), 0.0)
            recall = np.where(positives > 0, tp / positives, 0.0)
            f = np.where(precision + recall > 0,
                         2 * precision * recall / (precision + recall), 0.0)
        best = int(np.argmax(f))  # first maximum: ties go to the lower threshold
        return EdgeReport(best_f=float(f[best]), best_threshold=float(self.thresholds[best]),
                          thresholds=self.thresholds, precision=precision, recall=recall, f=f,
                          no_positives=no_positives)


def default_thresholds(count: int = 99) -> np.ndarray:
    """``count`` evenly spaced thresholds strictly inside (0, 1)."""
    if count < 1:
        raise ContractError(f"need at least one threshold, got {count}")
    return np.linspace(0.0, 1.0, count + 2)[1:-1]


def edge_fmeasure(prob: np.ndarray, gt: np.ndarray,
                  thresholds: Optional[np.ndarray] = None) -> EdgeReport:
    """Best F-measure of a probability map over a threshold sweep.

    Args:
        prob: Edge probabilities [H x W] in [0, 1]
        gt: Binary edge map [H x W]
        thresholds: Increasing thresholds (99 evenly spaced inside (0, 1) by default)

    Returns:
        EdgeReport; an all-zero ground truth gives F = 0 with ``no_positives`` set
    """
    thresholds = default_thresholds() if thresholds is None else np.asarray(thresholds, np.float64)
    return EdgeCounts(thresholds).add(prob, gt).report()


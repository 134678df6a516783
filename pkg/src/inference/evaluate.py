"""Dataset-level evaluation of a trained model."""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional, Sequence

import numpy as np
import pandas as pd

from src.engine.model import PixelModel
from src.heads.task import TaskKind
from src.inference.metrics import (EdgeCounts, angular_errors, confusion_matrix,
                                   default_thresholds, scores_from_confusion, stats_from_errors)
from src.inference.predict import predict_multiscale
from src.sampling.hypercolumn import DEFAULT_BUDGET_SCALARS

logger = logging.getLogger(__name__)

# Summary metric per task (normals: lower is better)
HEADLINE = {
    TaskKind.SEGMENTATION: "mean_iou",
    TaskKind.NORMALS: "mean",
    TaskKind.EDGES: "best_f",
}


@dataclass
class EvalReport:
    """Scores over a whole dataset plus the per-image breakdown."""
    kind: TaskKind
    metrics: Dict[str, float]
    per_image: pd.DataFrame

    @property
    def headline(self) -> float:
        return self.metrics[HEADLINE[self.kind]]


def evaluate_dataset(model: PixelModel, dataset, scales: Sequence[float] = (1.0,),
                     thresholds: int = 99, budget: Optional[int] = DEFAULT_BUDGET_SCALARS,
                     export_dir: Optional[Path] = None) -> EvalReport:
    """Predict every image and pool the metric statistics across the dataset.

    Args:
        model: Model to evaluate (eval mode, no graph)
        dataset: Object with ``__len__`` and ``item(i) -> (image, target_map)``
        scales: Inference scales (``[1.0]`` is single-scale)
        thresholds: Number of edge thresholds swept
        budget: Dense hypercolumn budget per image
        export_dir: When set, each PredictionMap is written there as PXT1

    Returns:
        EvalReport
    """
    kind = model.task.kind
    K = model.task.num_classes
    confusion = np.zeros((K, K), dtype=np.int64)
    errors = []
    counts = EdgeCounts(default_thresholds(thresholds))
    rows = []
    if export_dir is not None:
        Path(export_dir).mkdir(parents=True, exist_ok=True)

    for i in range(len(dataset)):
        image, target = dataset.item(i)
        prediction = predict_multiscale(model, image, scales, budget)
        if export_dir is not None:
            prediction.save(Path(export_dir) / f"pred_{i:05d}.pxt")
        if kind is TaskKind.SEGMENTATION:
            cm = confusion_matrix(prediction.labels(), target, K, model.task.ignore_label)
            confusion += cm
            rows.append({"image": i, "mean_iou": scores_from_confusion(cm).mean_iou
                         if cm.sum() else float("nan")})
        elif kind is TaskKind.NORMALS:
            e = angular_errors(prediction.values, target)
            errors.append(e)
            rows.append({"image": i, "mean": float(e.mean())})
        else:
            counts.add(prediction.edge_probability(), target)
            rows.append({"image": i, "positives": int((target > 0).sum())})

    if not len(dataset):
        return EvalReport(kind, {}, pd.DataFrame(rows))
    if kind is TaskKind.SEGMENTATION:
        scores = scores_from_confusion(confusion)
        metrics = {"mean_iou": scores.mean_iou, "mean_accuracy": scores.mean_accuracy}
    elif kind is TaskKind.NORMALS:
        metrics = stats_from_errors(np.concatenate(errors)).as_dict()
    else:
        report = counts.report()
        if report.no_positives:
            logger.warning("Held-out edge maps contain no positives; F-measure is 0")
        metrics = {"best_f": report.best_f, "best_threshold": report.best_threshold}
    logger.info(f"Evaluated {len(dataset)} images: "
                + ", ".join(f"{k}={v:.4f}" for k, v in metrics.items()))
    return EvalReport(kind, metrics, pd.DataFrame(rows))

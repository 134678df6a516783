"""Dense and multi-scale inference through the sampled hypercolumn path."""

import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from src.autodiff.graph import current_graph
from src.engine.model import PixelModel
from src.errors import ContractError, ResourceError, ShapeError
from src.heads.mlp import mlp_forward
from src.heads.task import TaskKind, unit_rows
from src.inference.resize import resize_bilinear
from src.layers.norm import RunMode
from src.sampling.hypercolumn import DEFAULT_BUDGET_SCALARS, dense_hypercolumn, sample_hypercolumn
from utils.data.pxt_format import write_tensor

logger = logging.getLogger(__name__)


@dataclass
class PredictionMap:
    """Per-pixel outputs of one image, channels first.

    Segmentation holds K class probabilities, normals hold unit vectors (a
    zero vector where the prediction vanished), edges hold one probability.
    """
    kind: TaskKind
    values: np.ndarray  # C x H x W

    @property
    def size(self) -> Tuple[int, int]:
        return self.values.shape[1], self.values.shape[2]

    def labels(self) -> np.ndarray:
        """Argmax class per pixel (lowest class id on ties)."""
        return np.argmax(self.values, axis=0)

    def edge_probability(self) -> np.ndarray:
        return self.values[0]

    def save(self, path) -> None:
        write_tensor(path, self.values)


def _require_no_graph() -> None:
    if current_graph() is not None:
        raise ContractError("inference must run outside a recording graph")


def _feature_maps(model: PixelModel, image: np.ndarray):
    if image.ndim != 3:
        raise ShapeError(f"expected a C x H x W image, got {image.shape}")
    return model.backbone.forward(model.image_tensor([image]), RunMode.EVAL)


def _head(model: PixelModel, features) -> np.ndarray:
    outputs = mlp_forward(features, model.mlp, RunMode.EVAL)
    return model.task.activate(outputs.data)


def predict_pixels(model: PixelModel, image: np.ndarray, rows: Sequence[int],
                   cols: Sequence[int]) -> np.ndarray:
    """Activated outputs [P x K] at the given pixels only."""
    _require_no_graph()
    fmaps, metas = _feature_maps(model, image)
    rows = np.asarray(rows, dtype=np.int64)
    hc = sample_hypercolumn(fmaps, metas, np.zeros(len(rows), dtype=np.int64), rows,
                            np.asarray(cols, dtype=np.int64), image_size=image.shape[-2:])
    return _head(model, hc)


def predict_dense(model: PixelModel, image: np.ndarray,
                  budget: Optional[int] = DEFAULT_BUDGET_SCALARS) -> PredictionMap:
    """Predict every pixel of one image.

    When the full H*W x D matrix does not fit ``budget`` the image is
    processed in horizontal strips; the result is the same either way.

    Args:
        model: Trained model
        image: [C x H x W]
        budget: Largest hypercolumn matrix (scalars) to materialize at once

    Returns:
        PredictionMap of the task's kind
    """
    _require_no_graph()
    fmaps, metas = _feature_maps(model, image)
    H, W = image.shape[-2:]
    D = sum(m.channels for m in metas)
    try:
        flat = _head(model, dense_hypercolumn(fmaps, metas, (H, W), 0, budget))
    except ResourceError:
        strip = budget // (W * D)
        if strip < 1:
            raise ResourceError("a single image row exceeds the memory budget", W * D, budget)
        logger.warning(f"Dense hypercolumns need {H * W * D} scalars; tiling in strips of {strip} rows")
        parts = []
        for top in range(0, H, strip):
            rows, cols = np.divmod(np.arange(top * W, min(H, top + strip) * W, dtype=np.int64), W)
            hc = sample_hypercolumn(fmaps, metas, np.zeros(len(rows), dtype=np.int64), rows, cols,
                                    image_size=(H, W))
            parts.append(_head(model, hc))
        flat = np.concatenate(parts, axis=0)
    return PredictionMap(model.task.kind, np.ascontiguousarray(flat.T.reshape(-1, H, W)))


def scaled_size(size: Tuple[int, int], scale: float, stride: int) -> Tuple[int, int]:
    """Image size at ``scale``, rounded to the nearest multiple of ``stride`` (at least one)."""
    return tuple(max(stride, int(round(extent * scale / stride)) * stride) for extent in size)


def predict_multiscale(model: PixelModel, image: np.ndarray, scales: Sequence[float],
                       budget: Optional[int] = DEFAULT_BUDGET_SCALARS) -> PredictionMap:
    """Average dense predictions made at several input scales.

    Each scale resizes the image, predicts densely and resizes the map back;
    maps are averaged and re-normalized (class probabilities to sum 1,
    normals to unit length). Repeated scales count once. A lone
    scale of 1 is the dense prediction itself.
    """
    unique = list(dict.fromkeys(float(s) for s in scales))
    if not unique or any(s <= 0 for s in unique):
        raise ContractError(f"scales must be positive and non-empty, got {list(scales)}")
    H, W = image.shape[-2:]
    stride = model.backbone.spec.max_stride()
    total = None
    for scale in unique:
        resized = resize_bilinear(image, scaled_size((H, W), scale, stride))
        back = resize_bilinear(predict_dense(model, resized, budget).values, (H, W))
        total = back if total is None else total + back
    if unique == [1.0]:
        return PredictionMap(model.task.kind, total)
    mean = total / len(unique)
    if model.task.kind is TaskKind.SEGMENTATION:
        mean = mean / mean.sum(axis=0, keepdims=True)
    elif model.task.kind is TaskKind.NORMALS:
        mean = unit_rows(mean.reshape(3, -1).T).T.reshape(mean.shape)
    return PredictionMap(model.task.kind, mean)

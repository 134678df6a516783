"""Task losses over per-pixel predictions."""

from typing import Optional

import numpy as np

from src.autodiff.graph import apply_op
from src.autodiff.ops import stable_sigmoid
from src.autodiff.tensor import Tensor
from src.errors import ContractError, ShapeError

IGNORE_LABEL = 255


def softmax_xent(logits: Tensor, labels: np.ndarray, ignore_label: Optional[int] = IGNORE_LABEL) -> Tensor:
    """Mean softmax cross-entropy over non-ignored rows.

    Args:
        logits: [S x K]
        labels: [S] class ids in [0, K) or ``ignore_label``
        ignore_label: Label whose rows contribute no loss and no gradient

    Returns:
        Scalar loss
    """
    if logits.ndim != 2:
        raise ShapeError(f"logits must be S x K, got {logits.shape}")
    S, K = logits.shape
    labels = np.asarray(labels).reshape(-1).astype(np.int64)
    if labels.shape[0] != S:
        raise ShapeError(f"{labels.shape[0]} labels for {S} rows")
    valid = labels != ignore_label if ignore_label is not None else np.ones(S, dtype=bool)
    n_valid = int(valid.sum())
    if n_valid == 0:
        raise ContractError("every row is ignored")
    if np.any((labels[valid] < 0) | (labels[valid] >= K)):
        raise ContractError(f"labels must lie in [0, {K})")

    z = logits.data - logits.data.max(axis=1, keepdims=True)
    ez = np.exp(z)
    total = ez.sum(axis=1, keepdims=True)
    lse = np.log(total)
    safe = np.where(valid, labels, 0)
    picked = np.take_along_axis(z, safe[:, None], axis=1)[:, 0]
    per_row = np.where(valid, lse[:, 0] - picked, 0.0)
    dtype = logits.data.dtype
    loss = np.asarray(per_row.sum() / n_valid, dtype=dtype)

    def backward(g):
        grad = ez / total
        grad[np.arange(S), safe] -= 1.0
        grad *= (valid[:, None] * (g / n_valid)).astype(dtype)
        return (grad.astype(dtype, copy=False),)

    return apply_op("softmax_xent", (logits,), loss, backward)


def euclidean_normal_loss(pred: Tensor, target: np.ndarray) -> Tensor:
    """Mean over rows of ||pred - target||^2; predictions are not normalized.

    Args:
        pred: [S x 3]
        target: [S x 3] unit vectors

    Returns:
        Scalar loss
    """
    target = np.asarray(target, dtype=pred.data.dtype)
    if pred.ndim != 2 or pred.shape[1] != 3 or target.shape != pred.shape:
        raise ShapeError(f"normals need matching S x 3 arrays, got {pred.shape} / {target.shape}")
    norms = np.linalg.norm(target, axis=1)
    if np.any(np.abs(norms - 1.0) > 1e-4):
        raise ContractError("normal targets must be unit vectors")
    S = pred.shape[0]
    diff = pred.data - target
    loss = np.asarray((diff * diff).sum() / S, dtype=pred.data.dtype)
    return apply_op("euclidean", (pred,), loss, lambda g: (diff * (2.0 * g / S),))


def _sigmoid_xent(z: np.ndarray, y: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))


def balanced_bce(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Class-balanced sigmoid cross-entropy.

    loss = 1/2 * (mean over positives + mean over negatives), so each class
    contributes the same total gradient mass however skewed the batch is; a
    perfectly balanced batch reduces to the plain mean.

    Args:
        logits: [S x 1]
        labels: [S] in {0, 1}

    Returns:
        Scalar loss
    """
    z = logits.data.reshape(-1)
    y = np.asarray(labels).reshape(-1).astype(logits.data.dtype)
    if z.shape[0] == 0:
        raise ContractError("balanced_bce needs a non-empty batch")
    if y.shape != z.shape:
        raise ShapeError(f"{y.shape[0]} labels for {z.shape[0]} logits")
    pos = y == 1
    n_pos = max(int(pos.sum()), 1)
    n_neg = max(int((~pos).sum()), 1)
    per = _sigmoid_xent(z, y)
    loss = 0.5 * (per[pos].sum() / n_pos + per[~pos].sum() / n_neg)
    weight = np.where(pos, 0.5 / n_pos, 0.5 / n_neg).astype(logits.data.dtype)
    shape = logits.shape

    def backward(g):
        return (((stable_sigmoid(z) - y) * weight * g).reshape(shape),)

    return apply_op("balanced_bce", (logits,), np.asarray(loss, dtype=logits.data.dtype), backward)

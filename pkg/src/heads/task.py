"""Task heads: output width, loss and output activation per task kind."""

from dataclasses import dataclass
from enum import Enum

import numpy as np

from src.autodiff.ops import stable_sigmoid
from src.autodiff.tensor import Tensor
from src.errors import ConfigError
from src.heads.losses import IGNORE_LABEL, balanced_bce, euclidean_normal_loss, softmax_xent


class TaskKind(Enum):
    SEGMENTATION = "segmentation"
    NORMALS = "normals"
    EDGES = "edges"


@dataclass
class TaskHead:
    """Binds a task kind to its loss and output activation."""
    kind: TaskKind
    num_classes: int = 4
    ignore_label: int = IGNORE_LABEL

    def __post_init__(self):
        if self.kind is TaskKind.SEGMENTATION and self.num_classes < 2:
            raise ConfigError(f"segmentation needs K >= 2, got {self.num_classes}")

    @property
    def num_outputs(self) -> int:
        if self.kind is TaskKind.SEGMENTATION:
            return self.num_classes
        return 3 if self.kind is TaskKind.NORMALS else 1

    def loss(self, outputs: Tensor, targets: np.ndarray) -> Tensor:
        """Task loss for [S x K] outputs against per-row targets."""
        if self.kind is TaskKind.SEGMENTATION:
            return softmax_xent(outputs, targets, self.ignore_label)
        if self.kind is TaskKind.NORMALS:
            return euclidean_normal_loss(outputs, targets)
        return balanced_bce(outputs, targets)

    def activate(self, outputs: np.ndarray) -> np.ndarray:
        """Per-row outputs -> class probabilities, unit normals, or edge probability."""
        if self.kind is TaskKind.SEGMENTATION:
            z = outputs - outputs.max(axis=1, keepdims=True)
            ez = np.exp(z)
            return ez / ez.sum(axis=1, keepdims=True)
        if self.kind is TaskKind.EDGES:
            return stable_sigmoid(outputs)
        return unit_rows(outputs)


def unit_rows(v: np.ndarray) -> np.ndarray:
    """Normalize rows to unit length; zero rows stay zero."""
    norms = np.linalg.norm(v, axis=1, keepdims=True)
    return np.divide(v, norms, out=np.zeros_like(v), where=norms > 0)

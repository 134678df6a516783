"""Per-pixel MLP predictor over hypercolumn rows."""

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from src.autodiff import ops
from src.autodiff.tensor import ScalarMode, Tensor, tensor_new
from src.errors import ShapeError
from src.layers.norm import BatchNormParams, RunMode, batchnorm, dropout
from src.sampling.hypercolumn import HypercolumnMatrix


@dataclass
class MlpParams:
    """Fully-connected layers ``x @ W + b`` with ReLU between them.

    No hidden layers gives the linear predictor; ``feature_norm`` batch
    normalizes the hypercolumn columns before the first layer.
    """
    layers: List[Tuple[Tensor, Tensor]]
    dropout: float = 0.0
    feature_norm: Optional[BatchNormParams] = None
    hidden: List[int] = field(default_factory=list)

    @classmethod
    def create(cls, in_dim: int, hidden: Sequence[int], out_dim: int, rng: np.random.Generator,
               sigma: float = 1e-3, last_sigma: Optional[float] = None, dropout_rate: float = 0.0,
               feature_norm: bool = False,
               mode: ScalarMode = ScalarMode.STANDARD) -> "MlpParams":
        """Gaussian-initialized weights, zero biases.

        Args:
            in_dim: D, the hypercolumn width
            hidden: Hidden layer widths
            out_dim: K outputs
            rng: Init generator
            sigma: Std of every weight matrix
            last_sigma: Std of the output layer (defaults to ``sigma``)
            dropout_rate: Dropout after each hidden activation
            feature_norm: Batch-normalize input columns
            mode: Scalar mode
        """
        widths = [in_dim, *hidden, out_dim]
        layers = []
        for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
            is_last = i == len(widths) - 2
            std = last_sigma if (is_last and last_sigma is not None) else sigma
            w = tensor_new((a, b), fill="gaussian", sigma=std, rng=rng, mode=mode,
                           requires_grad=True, name=f"mlp.fc{i + 1}.weight")
            bias = tensor_new((b,), mode=mode, requires_grad=True, name=f"mlp.fc{i + 1}.bias")
            layers.append((w, bias))
        norm = BatchNormParams.create(in_dim, mode, name="mlp.feature_bn") if feature_norm else None
        return cls(layers=layers, dropout=dropout_rate, feature_norm=norm, hidden=list(hidden))

    @property
    def in_dim(self) -> int:
        return self.layers[0][0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.layers[-1][0].shape[1]

    def parameters(self) -> List[Tensor]:
        params = []
        if self.feature_norm is not None:
            params.extend([self.feature_norm.gamma, self.feature_norm.beta])
        for w, b in self.layers:
            params.extend([w, b])
        return params

    def state(self) -> dict:
        state = {t.name: t for t in self.parameters()}
        if self.feature_norm is not None:
            state[self.feature_norm.running_mean.name] = self.feature_norm.running_mean
            state[self.feature_norm.running_var.name] = self.feature_norm.running_var
        return state


def mlp_forward(h: Union[HypercolumnMatrix, Tensor], params: MlpParams, mode: RunMode,
                rng: Optional[np.random.Generator] = None) -> Tensor:
    """Predict each row independently.

    Args:
        h: Hypercolumn rows [P x D]
        params: MLP weights
        mode: Dropout and batch-norm behaviour
        rng: Dropout generator (train mode with dropout > 0)

    Returns:
        Tensor [P x K]
    """
    x = h.features if isinstance(h, HypercolumnMatrix) else h
    if x.ndim != 2 or x.shape[1] != params.in_dim:
        raise ShapeError(f"MLP expects P x {params.in_dim} input, got {x.shape}")
    if params.feature_norm is not None:
        x = batchnorm(x, params.feature_norm, mode)
    last = len(params.layers) - 1
    for i, (w, b) in enumerate(params.layers):
        x = ops.add(ops.matmul(x, w), b)
        if i < last:
            x = ops.relu(x)
            x = dropout(x, params.dropout, mode, rng)
    return x

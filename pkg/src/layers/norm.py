"""Batch normalization and dropout."""

from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

from src.autodiff.graph import apply_op
from src.autodiff.tensor import ScalarMode, Tensor
from src.errors import ContractError, ShapeError


class RunMode(Enum):
    """Whether layers behave as in training or in evaluation."""
    TRAIN = "train"
    EVAL = "eval"


@dataclass
class BatchNormParams:
    """Learned affine and running statistics of one batch-norm layer."""
    gamma: Tensor
    beta: Tensor
    running_mean: Tensor
    running_var: Tensor
    momentum: float = 0.1
    eps: float = 1e-5

    @classmethod
    def create(cls, channels: int, mode: ScalarMode = ScalarMode.STANDARD,
               name: str = "bn") -> "BatchNormParams":
        """Fresh parameters: gamma=1, beta=0, running mean 0 / var 1."""
        dtype = mode.dtype
        return cls(
            gamma=Tensor(np.ones(channels, dtype), requires_grad=True, name=f"{name}.gamma"),
            beta=Tensor(np.zeros(channels, dtype), requires_grad=True, name=f"{name}.beta"),
            running_mean=Tensor(np.zeros(channels, dtype), name=f"{name}.running_mean"),
            running_var=Tensor(np.ones(channels, dtype), name=f"{name}.running_var"),
        )

    def __post_init__(self):
        if not 0.0 < self.momentum < 1.0:
            raise ContractError(f"batch-norm momentum must be in (0, 1), got {self.momentum}")
        if self.eps <= 0:
            raise ContractError(f"batch-norm eps must be > 0, got {self.eps}")


def _channel_layout(x: Tensor):
    if x.ndim == 2:
        return (0,), (1, -1)
    if x.ndim == 4:
        return (0, 2, 3), (1, -1, 1, 1)
    raise ShapeError(f"batchnorm expects S x C or B x C x H x W, got {x.shape}")


def batchnorm(x: Tensor, params: BatchNormParams, mode: RunMode) -> Tensor:
    """Normalize per channel, then apply the gamma/beta affine.

    Train mode uses the batch statistics (biased variance) and updates the
    running statistics by exponential moving average; eval mode is the fixed
    affine map given by the running statistics.
    """
    axes, view = _channel_layout(x)
    channels = x.shape[1]
    if params.gamma.shape != (channels,):
        raise ShapeError(f"batchnorm has {params.gamma.shape[0]} channels, input has {channels}")
    gamma = params.gamma.data.reshape(view)
    beta = params.beta.data.reshape(view)
    dtype = x.data.dtype
    eps = dtype.type(params.eps)

    if mode is RunMode.TRAIN:
        m = x.size // channels
        if m < 2:
            raise ContractError("train-mode batchnorm needs at least 2 values per channel")
        mean = x.data.mean(axis=axes, keepdims=True)
        centered = x.data - mean
        var = (centered * centered).mean(axis=axes, keepdims=True)
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = centered * inv_std
        mom = dtype.type(params.momentum)
        params.running_mean.data = (1 - mom) * params.running_mean.data + mom * mean.reshape(-1)
        params.running_var.data = (1 - mom) * params.running_var.data + mom * var.reshape(-1)

        def backward(g):
            dgamma = (g * xhat).sum(axis=axes)
            dbeta = g.sum(axis=axes)
            dxhat = g * gamma
            dx = inv_std / m * (
                m * dxhat
                - dxhat.sum(axis=axes, keepdims=True)
                - xhat * (dxhat * xhat).sum(axis=axes, keepdims=True)
            )
            return dx, dgamma, dbeta
    else:
        inv_std = 1.0 / np.sqrt(params.running_var.data.reshape(view) + eps)
        xhat = (x.data - params.running_mean.data.reshape(view)) * inv_std

        def backward(g):
            return g * gamma * inv_std, (g * xhat).sum(axis=axes), g.sum(axis=axes)

    out = (gamma * xhat + beta).astype(dtype, copy=False)
    return apply_op("batchnorm", (x, params.gamma, params.beta), out, backward)


def dropout(x: Tensor, rate: float, mode: RunMode,
            rng: Optional[np.random.Generator] = None) -> Tensor:
    """Inverted dropout: zero with probability ``rate``, scale survivors by 1/(1-rate).

    Eval mode, and rate 0, are the identity.
    """
    if not 0.0 <= rate < 1.0:
        raise ContractError(f"dropout rate must be in [0, 1), got {rate}")
    if mode is RunMode.EVAL or rate == 0.0:
        return x
    if rng is None:
        raise ContractError("train-mode dropout needs an rng")
    keep = (rng.random(x.shape) >= rate).astype(x.data.dtype) / x.data.dtype.type(1.0 - rate)
    return apply_op("dropout", (x,), x.data * keep, lambda g: (g * keep,))

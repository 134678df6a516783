"""SGD with momentum and weight decay."""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from src.autodiff.tensor import Tensor
from src.errors import NumericError, ShapeError


def decays(param: Tensor) -> bool:
    """Weight decay applies to weight matrices/kernels only, not biases or norm affines."""
    return bool(param.name) and param.name.endswith(".weight")


@dataclass
class OptimState:
    """Momentum buffers and progress counters."""
    velocity: Dict[str, np.ndarray] = field(default_factory=dict)
    iteration: int = 0
    epoch: int = 0


def sgd_step(params: Sequence[Tensor], grads: Sequence[Optional[np.ndarray]], state: OptimState,
             lr: float, momentum: float, weight_decay: float,
             check_numerics: bool = False) -> OptimState:
    """One SGD update, in place on ``params`` and ``state``.

    v <- momentum * v + grad + weight_decay * param   (decay on weights only)
    param <- param - lr * v

    Args:
        params: Named parameter tensors
        grads: Matching gradients (None counts as zero)
        state: Velocity buffers keyed by parameter name
        lr: Learning rate
        momentum: Momentum factor
        weight_decay: L2 factor
        check_numerics: Raise NumericError on non-finite gradients

    Returns:
        The updated state (same object)
    """
    if len(params) != len(grads):
        raise ShapeError(f"{len(params)} parameters but {len(grads)} gradients")
    for p, g in zip(params, grads):
        g = np.zeros_like(p.data) if g is None else g
        if g.shape != p.shape:
            raise ShapeError(f"{p.name}: gradient {g.shape} vs parameter {p.shape}")
        if check_numerics and not np.all(np.isfinite(g)):
            raise NumericError("non-finite gradient", p.name)
        dtype = p.data.dtype
        step = g.astype(dtype, copy=True)
        if weight_decay and decays(p):
            step += dtype.type(weight_decay) * p.data
        v = state.velocity.get(p.name)
        if v is not None and momentum:
            step += dtype.type(momentum) * v
        state.velocity[p.name] = step
        p.data = p.data - dtype.type(lr) * step
    state.iteration += 1
    return state


class SGD:
    """Stateful wrapper binding a parameter list to its momentum buffers."""

    def __init__(self, params: List[Tensor], momentum: float = 0.9, weight_decay: float = 5e-4,
                 check_numerics: bool = False):
        self.params = params
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.check_numerics = check_numerics
        self.state = OptimState()
        names = [p.name for p in params]
        if None in names or len(set(names)) != len(names):
            raise ShapeError("SGD needs uniquely named parameters")

    def step(self, lr: float) -> None:
        sgd_step(self.params, [p.grad for p in self.params], self.state, lr,
                 self.momentum, self.weight_decay, self.check_numerics)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

"""Central finite-difference verification of backward rules."""

import logging
from dataclasses import dataclass
from typing import Callable, List, Optional

import numpy as np

from src.autodiff.graph import Graph
from src.autodiff.tensor import ScalarMode, Tensor
from src.errors import ContractError

logger = logging.getLogger(__name__)


@dataclass
class GradCheckReport:
    """Worst disagreement between analytic and numeric gradients."""
    max_rel_err: float
    worst_param: Optional[str]
    worst_index: Optional[int]
    checked: int

    def passed(self, tolerance: float = 1e-5) -> bool:
        return self.max_rel_err <= tolerance


def _scalar(loss: Tensor) -> float:
    if not isinstance(loss, Tensor) or loss.size != 1:
        raise ContractError("grad_check needs fn to return a scalar loss tensor")
    return loss.item()


def grad_check(fn: Callable[[], Tensor], params: List[Tensor], eps: float = 1e-5,
               max_per_param: Optional[int] = None,
               rng: Optional[np.random.Generator] = None) -> GradCheckReport:
    """Compare backward gradients with central finite differences.

    ``fn`` must rebuild the whole computation on every call (it is run once
    under a recording graph and twice more per checked scalar) and must be
    deterministic; dropout inside ``fn`` should draw from a freshly seeded
    generator each call.

    Args:
        fn: Graph-building callable returning a scalar loss
        params: Verification-precision leaf tensors to check
        eps: Finite-difference step
        max_per_param: Check a random subset of this many scalars per
            parameter (default: every scalar)
        rng: Generator for the subset choice

    Returns:
        Report with the max relative error, using the denominator
        max(|analytic|, |numeric|, 1e-12)
    """
    for p in params:
        if p.mode is not ScalarMode.VERIFICATION:
            raise ContractError(f"grad_check runs in verification mode; {p.name} is {p.mode.value}")
        p.requires_grad = True

    with Graph(ScalarMode.VERIFICATION) as graph:
        loss = fn()
        _scalar(loss)
        graph.backward(loss)
    analytic = [np.zeros(p.shape) if p.grad is None else np.array(p.grad) for p in params]

    worst = GradCheckReport(0.0, None, None, 0)
    for k, p in enumerate(params):
        flat_grad = analytic[k].reshape(-1)
        indices = np.arange(p.size)
        if max_per_param is not None and max_per_param < p.size:
            chooser = rng if rng is not None else np.random.default_rng(0)
            indices = np.sort(chooser.choice(p.size, size=max_per_param, replace=False))
        original = p.data
        for idx in indices:
            perturbed = original.copy()
            perturbed.reshape(-1)[idx] += eps
            p.data = perturbed
            plus = _scalar(fn())
            perturbed = original.copy()
            perturbed.reshape(-1)[idx] -= eps
            p.data = perturbed
            minus = _scalar(fn())
            p.data = original
            numeric = (plus - minus) / (2.0 * eps)
            a = float(flat_grad[idx])
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-12)
            worst.checked += 1
            if rel > worst.max_rel_err or worst.worst_param is None:
                worst.max_rel_err = rel
                worst.worst_param = p.name or f"param{k}"
                worst.worst_index = int(idx)

    logger.debug(f"grad_check: {worst.checked} scalars, max_rel_err={worst.max_rel_err:.3e}")
    return worst

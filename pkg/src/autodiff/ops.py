"""Differentiable tensor operations.

Every op computes its forward value with numpy and hands an exact backward
rule to :func:`src.autodiff.graph.apply_op`. Binary elementwise ops accept
either identical shapes or ``b`` shaped like the trailing (channel) axis of
``a``.
"""

from typing import Iterable, Optional, Sequence, Tuple, Union

import numpy as np

from src.autodiff.graph import apply_op, numerics_checked
from src.autodiff.tensor import Tensor
from src.errors import ContractError, DomainError, ShapeError

Axes = Optional[Union[int, Sequence[int]]]


# ---------------------------------------------------------------------------
# matmul
# ---------------------------------------------------------------------------

def matmul_data(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Raw matrix product.

    In verification precision the inner dimension is accumulated in a fixed
    order, one rank-1 update per index, so each output row depends only on
    its own input row. That makes single-row and many-row products agree
    bit for bit. Standard precision goes through BLAS.
    """
    if a.dtype == np.float64:
        out = np.zeros((a.shape[0], b.shape[1]), dtype=np.float64)
        for t in range(a.shape[1]):
            out += a[:, t:t + 1] * b[t:t + 1, :]
        return out
    return a @ b


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of ``a`` [m x k] and ``b`` [k x n]."""
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    a_data, b_data = a.data, b.data

    def backward(g):
        return g @ b_data.T, a_data.T @ g

    return apply_op("matmul", (a, b), matmul_data(a_data, b_data), backward)


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------

def _broadcast_kind(a: Tensor, b: Tensor, op: str) -> bool:
    """Return True when ``b`` broadcasts over the trailing axis of ``a``."""
    if a.shape == b.shape:
        return False
    if b.ndim == 1 and a.ndim >= 1 and a.shape[-1] == b.shape[0]:
        return True
    raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} are not compatible")


def _reduce_to(g: np.ndarray, broadcast: bool, channels: int) -> np.ndarray:
    return g.reshape(-1, channels).sum(axis=0) if broadcast else g


def add(a: Tensor, b: Tensor) -> Tensor:
    bc = _broadcast_kind(a, b, "add")
    k = b.shape[-1]
    return apply_op("add", (a, b), a.data + b.data,
                    lambda g: (g, _reduce_to(g, bc, k)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    bc = _broadcast_kind(a, b, "sub")
    k = b.shape[-1]
    return apply_op("sub", (a, b), a.data - b.data,
                    lambda g: (g, -_reduce_to(g, bc, k)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    bc = _broadcast_kind(a, b, "mul")
    k = b.shape[-1]
    a_data, b_data = a.data, b.data
    return apply_op("mul", (a, b), a_data * b_data,
                    lambda g: (g * b_data, _reduce_to(g * a_data, bc, k)))


def scale(x: Tensor, c: float) -> Tensor:
    c = x.data.dtype.type(c)
    return apply_op("scale", (x,), x.data * c, lambda g: (g * c,))


def relu(x: Tensor) -> Tensor:
    # subgradient at exactly 0 is 0
    mask = x.data > 0
    return apply_op("relu", (x,), np.where(mask, x.data, 0).astype(x.data.dtype),
                    lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    y = stable_sigmoid(x.data)
    return apply_op("sigmoid", (x,), y, lambda g: (g * y * (1 - y),))


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    return apply_op("exp", (x,), y, lambda g: (g * y,))


def log(x: Tensor) -> Tensor:
    if numerics_checked() and np.any(x.data <= 0):
        raise DomainError("log of non-positive input")
    x_data = x.data
    with np.errstate(divide="ignore", invalid="ignore"):
        y = np.log(x_data)
    return apply_op("log", (x,), y, lambda g: (g / x_data,))


_UNARY = {"relu": relu, "sigmoid": sigmoid, "exp": exp, "log": log}
_BINARY = {"add": add, "sub": sub, "mul": mul}


def elementwise(op: str, *inputs: Tensor, factor: Optional[float] = None) -> Tensor:
    """Dispatch a named pointwise op.

    Args:
        op: One of add, sub, mul, relu, sigmoid, exp, log, scale
        inputs: One tensor (unary ops, scale) or two (binary ops)
        factor: Multiplier for ``scale``

    Returns:
        Result tensor
    """
    if op in _BINARY:
        if len(inputs) != 2:
            raise ContractError(f"{op} takes two tensors")
        return _BINARY[op](*inputs)
    if len(inputs) != 1:
        raise ContractError(f"{op} takes one tensor")
    if op == "scale":
        if factor is None:
            raise ContractError("scale needs a factor")
        return scale(inputs[0], factor)
    if op in _UNARY:
        return _UNARY[op](inputs[0])
    raise ContractError(f"unknown elementwise op {op!r}")


def stable_sigmoid(z: np.ndarray) -> np.ndarray:
    """Overflow-free logistic function."""
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def _normalize_axes(axes: Axes, ndim: int) -> Tuple[int, ...]:
    if axes is None:
        return tuple(range(ndim))
    if isinstance(axes, int):
        axes = (axes,)
    out = []
    for ax in axes:
        if not -ndim <= ax < ndim:
            raise ShapeError(f"axis {ax} out of range for rank {ndim}")
        out.append(ax % ndim)
    return tuple(sorted(set(out)))


def _reduction_extent(x: Tensor, axes: Tuple[int, ...]) -> int:
    extent = int(np.prod([x.shape[a] for a in axes], dtype=np.int64)) if axes else 1
    if extent == 0 or x.size == 0:
        raise DomainError("empty reduction extent")
    return extent


def _expand(g: np.ndarray, shape: Tuple[int, ...], axes: Tuple[int, ...]) -> np.ndarray:
    kept = [1 if i in axes else s for i, s in enumerate(shape)]
    return np.broadcast_to(g.reshape(kept), shape)


def reduce_sum(x: Tensor, axes: Axes = None) -> Tensor:
    ax = _normalize_axes(axes, x.ndim)
    _reduction_extent(x, ax)
    shape = x.shape
    out = np.asarray(x.data.sum(axis=ax), dtype=x.data.dtype)
    return apply_op("sum", (x,), out, lambda g: (np.array(_expand(g, shape, ax)),))


def reduce_mean(x: Tensor, axes: Axes = None) -> Tensor:
    ax = _normalize_axes(axes, x.ndim)
    n = _reduction_extent(x, ax)
    shape = x.shape
    inv = x.data.dtype.type(1.0 / n)
    out = np.asarray(x.data.sum(axis=ax) * inv, dtype=x.data.dtype)
    return apply_op("mean", (x,), out, lambda g: (np.array(_expand(g * inv, shape, ax)),))


def reduce_max(x: Tensor, axes: Axes = None) -> Tensor:
    """Max reduction; backward routes to the lowest-index argmax."""
    ax = _normalize_axes(axes, x.ndim)
    _reduction_extent(x, ax)
    kept = tuple(i for i in range(x.ndim) if i not in ax)
    moved = np.transpose(x.data, kept + ax)
    flat = moved.reshape(moved.shape[:len(kept)] + (-1,))
    arg = np.argmax(flat, axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    shape = x.shape

    def backward(g):
        onehot = np.zeros_like(flat)
        np.put_along_axis(onehot, arg[..., None], np.asarray(g)[..., None], axis=-1)
        inverse = np.argsort(kept + ax)
        return (np.transpose(onehot.reshape(moved.shape), inverse).reshape(shape),)

    return apply_op("max", (x,), np.asarray(out, dtype=x.data.dtype), backward)


_REDUCTIONS = {"sum": reduce_sum, "mean": reduce_mean, "max": reduce_max}


def reduce(op: str, x: Tensor, axes: Axes = None) -> Tensor:
    """Dispatch a named reduction (sum, mean, max) over ``axes`` (None = all)."""
    if op not in _REDUCTIONS:
        raise ContractError(f"unknown reduction {op!r}")
    return _REDUCTIONS[op](x, axes)


# ---------------------------------------------------------------------------
# structural helpers
# ---------------------------------------------------------------------------

def reshape(x: Tensor, shape: Iterable[int]) -> Tensor:
    shape = tuple(shape)
    original = x.shape
    return apply_op("reshape", (x,), x.data.reshape(shape).copy(),
                    lambda g: (g.reshape(original),))


def concat_columns(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate 2-D tensors along axis 1."""
    widths = [p.shape[1] for p in parts]
    bounds = np.cumsum([0] + widths)

    def backward(g):
        return tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(parts)))

    return apply_op("concat", tuple(parts), np.concatenate([p.data for p in parts], axis=1),
                    backward)


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate 2-D tensors along axis 0."""
    if len(parts) == 1:
        return parts[0]
    heights = [p.shape[0] for p in parts]
    bounds = np.cumsum([0] + heights)

    def backward(g):
        return tuple(g[bounds[i]:bounds[i + 1]] for i in range(len(parts)))

    return apply_op("concat_rows", tuple(parts), np.concatenate([p.data for p in parts], axis=0),
                    backward)


def take_rows(x: Tensor, index: np.ndarray) -> Tensor:
    """Rows ``x[index]`` of a 2-D tensor; repeated rows accumulate gradient."""
    index = np.asarray(index, dtype=np.int64).reshape(-1)
    if x.ndim != 2:
        raise ShapeError(f"take_rows needs a 2-D tensor, got {x.shape}")
    if len(index) and (index.min() < 0 or index.max() >= x.shape[0]):
        raise ContractError(f"row index outside 0..{x.shape[0] - 1}")
    shape = x.shape

    def backward(g):
        out = np.zeros(shape, dtype=g.dtype)
        np.add.at(out, index, g)
        return (out,)

    return apply_op("take_rows", (x,), x.data[index], backward)

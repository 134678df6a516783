"""Dense tensor value carrier and scalar modes."""

from enum import Enum
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from src.errors import ContractError, ModeError, ShapeError


class ScalarMode(Enum):
    """Scalar precision of a tensor or graph."""

    STANDARD = "standard"          # 32-bit
    VERIFICATION = "verification"  # 64-bit, bit-deterministic ops

    @property
    def dtype(self) -> np.dtype:
        return np.dtype(np.float32) if self is ScalarMode.STANDARD else np.dtype(np.float64)

    @classmethod
    def of(cls, array: np.ndarray) -> "ScalarMode":
        """Mode matching an array's dtype."""
        if array.dtype == np.float32:
            return cls.STANDARD
        if array.dtype == np.float64:
            return cls.VERIFICATION
        raise ModeError(f"no scalar mode for dtype {array.dtype}")


class Tensor:
    """Dense n-dimensional array with an optional gradient buffer.

    Tensors produced by ops are read-only; leaves created by the caller
    (parameters, inputs) stay writable so optimizers and gradient checks
    can replace their values.
    """

    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None,
                 mode: Optional[ScalarMode] = None):
        """Wrap an array.

        Args:
            data: Array-like values
            requires_grad: Whether backward should produce a gradient for this tensor
            name: Optional label used in error messages and checkpoints
            mode: Scalar mode; inferred from the dtype when omitted (non-float
                input defaults to verification precision)
        """
        array = np.asarray(data)
        if mode is None:
            mode = ScalarMode.STANDARD if array.dtype == np.float32 else ScalarMode.VERIFICATION
        if array.dtype != mode.dtype:
            array = array.astype(mode.dtype)
        self.data: np.ndarray = array
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(self.data.shape)

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def mode(self) -> ScalarMode:
        return ScalarMode.of(self.data)

    def item(self) -> float:
        """Return the single value of a one-element tensor."""
        if self.size != 1:
            raise ContractError(f"item() needs one element, tensor has {self.size}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, mode={self.mode.value}{label})"

    # Operator sugar; the real work lives in src.autodiff.ops
    def __add__(self, other: "Tensor") -> "Tensor":
        from src.autodiff import ops
        return ops.add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        from src.autodiff import ops
        return ops.sub(self, other)

    def __mul__(self, other: Union["Tensor", float]) -> "Tensor":
        from src.autodiff import ops
        if isinstance(other, Tensor):
            return ops.mul(self, other)
        return ops.scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self) -> "Tensor":
        from src.autodiff import ops
        return ops.scale(self, -1.0)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        from src.autodiff import ops
        return ops.matmul(self, other)


def _validate_shape(shape: Sequence[int]) -> Tuple[int, ...]:
    shape = tuple(int(s) for s in shape)
    if not shape or any(s < 1 for s in shape):
        raise ShapeError(f"all extents must be >= 1, got {list(shape)}")
    return shape


def tensor_new(shape: Sequence[int], fill: str = "zeros", value: float = 0.0,
               mean: float = 0.0, sigma: float = 1.0,
               rng: Optional[np.random.Generator] = None,
               mode: ScalarMode = ScalarMode.STANDARD,
               requires_grad: bool = False, name: Optional[str] = None) -> Tensor:
    """Create a tensor filled with zeros, a constant, or gaussian samples.

    Args:
        shape: Extents, each >= 1
        fill: One of ``"zeros"``, ``"constant"``, ``"gaussian"``
        value: Constant used by ``"constant"``
        mean: Gaussian mean
        sigma: Gaussian standard deviation (>= 0)
        rng: Generator for ``"gaussian"``; the same seed gives the same values
        mode: Scalar mode of the result
        requires_grad: Mark the tensor as a differentiable leaf
        name: Optional label

    Returns:
        New leaf tensor
    """
    shape = _validate_shape(shape)
    if fill == "zeros":
        data = np.zeros(shape, dtype=mode.dtype)
    elif fill == "constant":
        data = np.full(shape, value, dtype=mode.dtype)
    elif fill == "gaussian":
        if sigma < 0:
            raise ContractError(f"sigma must be >= 0, got {sigma}")
        if rng is None:
            raise ContractError("gaussian fill needs an explicit rng")
        data = rng.normal(mean, sigma, size=shape).astype(mode.dtype)
    else:
        raise ContractError(f"unknown fill {fill!r}")
    return Tensor(data, requires_grad=requires_grad, name=name, mode=mode)

"""Dense tensors with reverse-mode automatic differentiation."""

from src.autodiff.graph import Graph, apply_op, current_graph
from src.autodiff.tensor import ScalarMode, Tensor, tensor_new

__all__ = ["Graph", "ScalarMode", "Tensor", "apply_op", "current_graph", "tensor_new"]

"""Record-on-execute computation tape and reverse-mode traversal."""

import threading
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.autodiff.tensor import ScalarMode, Tensor
from src.errors import ContractError, ModeError, NumericError

BackwardRule = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

_local = threading.local()


@dataclass
class Node:
    """One recorded operation."""
    index: int
    op: str
    inputs: Tuple[Tensor, ...]
    output: Tensor
    backward: BackwardRule


class Graph:
    """Append-only tape of operations, owned by a single thread.

    Usage::

        with Graph(ScalarMode.VERIFICATION) as graph:
            loss = build(...)
            graph.backward(loss)

    Nodes are appended in execution order, so insertion order is a
    topological order and backward simply walks the list in reverse.
    """

    def __init__(self, mode: ScalarMode = ScalarMode.STANDARD, check_numerics: bool = False):
        """Create an empty graph.

        Args:
            mode: Scalar mode every recorded tensor must use
            check_numerics: Test mode; raise on non-finite outputs and on
                log of non-positive input
        """
        self.mode = mode
        self.check_numerics = check_numerics
        self.nodes: List[Node] = []
        self.visits: List[int] = []

    def __enter__(self) -> "Graph":
        _stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        stack = _stack()
        if not stack or stack[-1] is not self:
            raise ContractError("graph contexts closed out of order")
        stack.pop()

    def __len__(self) -> int:
        return len(self.nodes)

    def check_mode(self, tensors: Sequence[Tensor], op: str) -> None:
        for t in tensors:
            if t.data.dtype != self.mode.dtype:
                raise ModeError(
                    f"{op}: {t.mode.value} tensor in a {self.mode.value} graph"
                )

    def record(self, op: str, inputs: Sequence[Tensor], data: np.ndarray,
               backward: BackwardRule) -> Tensor:
        """Append a node and return its output tensor."""
        inputs = tuple(inputs)
        data.setflags(write=False)
        out = Tensor(data, requires_grad=True, mode=self.mode)
        self.nodes.append(Node(len(self.nodes), op, inputs, out, backward))
        self.visits.append(0)
        return out

    def backward(self, loss: Tensor, seed: Optional[np.ndarray] = None) -> None:
        """Propagate gradients from a scalar loss to every tensor on the tape.

        Gradients are recomputed from scratch on every call, so running
        backward twice yields identical buffers.

        Args:
            loss: Scalar (one-element) output of this graph
            seed: Optional upstream gradient; defaults to ones
        """
        if loss.size != 1 and seed is None:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        grads: Dict[int, np.ndarray] = {}
        leaves: Dict[int, Tensor] = {}
        for node in self.nodes:
            for t in node.inputs:
                if t.requires_grad:
                    leaves.setdefault(id(t), t)
        for node in self.nodes:
            leaves.pop(id(node.output), None)

        grads[id(loss)] = (
            np.ones(loss.shape, dtype=self.mode.dtype) if seed is None
            else np.asarray(seed, dtype=self.mode.dtype).reshape(loss.shape)
        )
        self.visits = [0] * len(self.nodes)

        for node in reversed(self.nodes):
            upstream = grads.get(id(node.output))
            if upstream is None:
                continue
            self.visits[node.index] += 1
            node.output.grad = upstream
            input_grads = node.backward(upstream)
            for t, g in zip(node.inputs, input_grads):
                if g is None or not t.requires_grad:
                    continue
                key = id(t)
                if key in grads:
                    grads[key] = grads[key] + g
                else:
                    grads[key] = np.array(g, dtype=self.mode.dtype, copy=True)
                if self.check_numerics and not np.all(np.isfinite(grads[key])):
                    raise NumericError(f"non-finite gradient from {node.op}", t.name)

        for key, leaf in leaves.items():
            leaf.grad = grads.get(key, np.zeros(leaf.shape, dtype=self.mode.dtype))
        if any(v > 1 for v in self.visits):
            raise ContractError("a graph node was visited more than once")


def _stack() -> List[Graph]:
    if not hasattr(_local, "stack"):
        _local.stack = []
    return _local.stack


def current_graph() -> Optional[Graph]:
    """Innermost active graph on this thread, if any."""
    stack = _stack()
    return stack[-1] if stack else None


def apply_op(op: str, inputs: Sequence[Tensor], data: np.ndarray,
             backward: BackwardRule) -> Tensor:
    """Wrap an op result, recording it when a graph is active and needs it.

    Outside any graph the op runs purely (no tape), which is how eval-mode
    inference executes.
    """
    inputs = tuple(inputs)
    dtypes = {t.data.dtype for t in inputs}
    if len(dtypes) > 1:
        raise ModeError(f"{op}: inputs mix scalar modes {sorted(str(d) for d in dtypes)}")
    graph = current_graph()
    if graph is not None:
        graph.check_mode(inputs, op)
        if graph.check_numerics and not np.all(np.isfinite(data)):
            raise NumericError(f"non-finite output from {op}")
        if any(t.requires_grad for t in inputs):
            return graph.record(op, inputs, data, backward)
    mode = ScalarMode.of(data) if data.dtype in (np.float32, np.float64) else None
    return Tensor(data, mode=mode)


def numerics_checked() -> bool:
    """True when the active graph checks numerics (test mode)."""
    graph = current_graph()
    return graph is not None and graph.check_numerics

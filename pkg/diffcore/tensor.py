"""
Tensor, Parameter and the recorded Graph used for reverse-mode differentiation.

Operations are ``Function`` subclasses: ``forward`` receives raw arrays, ``backward``
receives the gradient of the output and returns one gradient (or None) per input.
A Graph records executed functions only while it is active (``with Graph() as g:``)
and only for outputs that depend on a tensor with ``requires_grad``.
"""

import threading
from typing import Any, List, Optional, Sequence, Tuple

import numpy as np

from utils.errors import ShapeError

_state = threading.local()


def _graph_stack() -> List["Graph"]:
    if not hasattr(_state, "stack"):
        _state.stack = []
    return _state.stack


def active_graph() -> Optional["Graph"]:
    stack = _graph_stack()
    return stack[-1] if stack else None


class Tensor:
    """
    n-dimensional value with an accumulated gradient of the same shape
    (channels-first: C×H×W for feature maps, flat vectors for dense features)
    """

    def __init__(self, values: Any, requires_grad: bool = False, dtype: Any = None):
        array = np.array(values, dtype=dtype)
        if array.dtype.kind != "f":
            array = array.astype(np.float64)
        self.values = array
        self.requires_grad = requires_grad
        self.creator: Optional["Function"] = None
        self._grad: Optional[np.ndarray] = None

    @property
    def grad(self) -> np.ndarray:
        if self._grad is None:
            self._grad = np.zeros_like(self.values)
        return self._grad

    @grad.setter
    def grad(self, value: np.ndarray) -> None:
        self._grad = np.asarray(value, dtype=self.values.dtype).reshape(self.values.shape)

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    @property
    def size(self) -> int:
        return self.values.size

    @property
    def dtype(self) -> np.dtype:
        return self.values.dtype

    def zero_grad(self) -> None:
        self._grad = np.zeros_like(self.values)

    def item(self) -> float:
        return float(self.values.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.values

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"


class Parameter(Tensor):
    """
    Trainable tensor with a unique name and an SGD momentum buffer
    """

    def __init__(self, values: Any, name: str, dtype: Any = None):
        super().__init__(values, requires_grad=True, dtype=dtype)
        self.name = name
        self.momentum_buffer = np.zeros_like(self.values)

    @property
    def tensor(self) -> "Parameter":
        return self

    def __repr__(self) -> str:
        return f"Parameter(name={self.name!r}, shape={self.shape}, dtype={self.dtype})"


class Node:
    __slots__ = ("function", "output")

    def __init__(self, function: "Function", output: Tensor):
        self.function = function
        self.output = output


class Graph:
    """
    Ordered record of executed operations; inputs always precede their consumers
    """

    def __init__(self):
        self.nodes: List[Node] = []

    def record(self, function: "Function", output: Tensor) -> None:
        self.nodes.append(Node(function, output))

    def __enter__(self) -> "Graph":
        _graph_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        stack = _graph_stack()
        if stack and stack[-1] is self:
            stack.pop()

    def __len__(self) -> int:
        return len(self.nodes)


class Function:
    """
    Base class for differentiable operations
    """

    def __init__(self, *inputs: Tensor):
        self.inputs = inputs

    def forward(self, *arrays: np.ndarray, **kwargs: Any) -> np.ndarray:
        raise NotImplementedError("Forward pass not implemented for this function")

    def backward(self, grad: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        raise NotImplementedError("Backward pass not implemented for this function")

    @classmethod
    def apply(cls, *inputs: Tensor, **kwargs: Any) -> Tensor:
        function = cls(*inputs)
        out = Tensor(function.forward(*(t.values for t in inputs), **kwargs))
        out.requires_grad = any(t.requires_grad for t in inputs)

        graph = active_graph()
        if out.requires_grad and graph is not None:
            out.creator = function
            graph.record(function, out)
        return out


def backward(graph: Graph, loss: Tensor) -> None:
    """
    Propagate d(loss)/d(.) through the recorded graph.

    Only leaf tensors (parameters and inputs created outside the graph) accumulate into
    ``.grad``; intermediate gradients live in a local table, so calling backward for
    several losses of one graph adds up exactly like a single call on their sum.
    """
    if loss.size != 1:
        raise ShapeError(f"backward requires a scalar loss, got shape {loss.shape}")

    seed = np.ones_like(loss.values)
    if loss.creator is None:
        if loss.requires_grad:
            loss.grad += seed
        return

    pending = {id(loss): seed}
    for node in reversed(graph.nodes):
        upstream = pending.pop(id(node.output), None)
        if upstream is None:
            continue
        input_grads = node.function.backward(upstream)
        for tensor, grad in zip(node.function.inputs, input_grads):
            if grad is None or not tensor.requires_grad:
                continue
            if tensor.creator is None:
                tensor.grad += grad
            else:
                key = id(tensor)
                pending[key] = pending[key] + grad if key in pending else grad

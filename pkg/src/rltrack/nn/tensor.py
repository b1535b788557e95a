"""Array container with reverse-mode gradient tracking.

A ``Tensor`` wraps a numpy array. Operations in :mod:`rltrack.nn.ops` build a
graph of tensors as a side effect of the forward computation; :func:`backward`
walks that graph in reverse topological order and accumulates gradients into
every tensor created with ``requires_grad=True``.
"""

from __future__ import annotations

from typing import Callable, Iterable, Optional, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class GraphError(RuntimeError):
    """Raised when backward is requested without a recorded forward pass."""


def _as_float_array(data, dtype=None) -> np.ndarray:
    arr = np.asarray(data)
    if dtype is not None:
        return arr.astype(dtype, copy=False)
    if arr.dtype in (np.float32, np.float64):
        return arr
    return arr.astype(DEFAULT_DTYPE)


class Tensor:
    """Dense float array with an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        name: Optional[str] = None,
        dtype=None,
        _parents: Sequence["Tensor"] = (),
        _backward: Optional[Callable[[np.ndarray], None]] = None,
    ):
        self.data = _as_float_array(data, dtype)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents = tuple(_parents)
        self._backward = _backward

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"


def needs_grad(*tensors: Tensor) -> bool:
    return any(t.requires_grad for t in tensors)


def _topological_order(root: Tensor) -> list:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen and parent.requires_grad:
                stack.append((parent, False))
    return order


def backward(root: Tensor, grad: Optional[np.ndarray] = None) -> None:
    """Propagate ``grad`` (d loss / d root) back through the recorded graph.

    Intermediate gradients are released after use; only leaf tensors keep
    their ``grad``. The graph is consumed by the call.
    """
    if not root.requires_grad:
        raise GraphError("output does not depend on any trainable tensor")
    if root._backward is None:
        raise GraphError("no recorded forward pass behind this tensor")
    if grad is None:
        if root.size != 1:
            raise ShapeError("an explicit upstream gradient is required for non-scalar outputs")
        grad = np.ones_like(root.data)
    grad = np.asarray(grad, dtype=root.dtype)
    if grad.shape != root.shape:
        raise ShapeError(f"upstream gradient shape {grad.shape} does not match output {root.shape}")

    order = _topological_order(root)
    root.accumulate(grad)
    for node in reversed(order):
        if node._backward is None:
            continue
        if node.grad is not None:
            node._backward(node.grad)
        # interior node: free its buffer and detach the graph
        node.grad = None
        node._backward = None
        node._parents = ()


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None

"""Tensor value type and the reverse-mode tape.

Every tensor produced by an op remembers its parents and a closure that maps
the output gradient to parent gradients.  Node ids are drawn from a global
monotonically increasing counter, so a node's inputs always carry smaller ids
than the node itself; sorting reachable nodes by id gives a valid
topological order without an explicit graph container.
"""

from __future__ import annotations

import contextlib
import itertools
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

_ids = itertools.count()
_state = threading.local()


class ShapeError(ValueError):
    """Raised when an op receives inputs of incompatible shape."""

    def __init__(self, op: str, expected, actual):
        self.op = op
        self.expected = expected
        self.actual = actual
        super().__init__(f"{op}: expected shape {expected}, got {actual}")


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Run ops without recording them on the tape."""
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "id", "op", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        if any(d <= 0 for d in arr.shape):
            raise ShapeError("tensor", "positive dimensions", arr.shape)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.id = next(_ids)
        self.op = "leaf"
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.name = name

    @classmethod
    def _from_op(cls, data: np.ndarray, parents: Sequence["Tensor"], backward, op: str) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data if data.dtype == np.float64 else data.astype(np.float64)
        out.grad = None
        out.id = next(_ids)
        out.op = op
        out.name = None
        track = grad_enabled() and any(p.requires_grad for p in parents)
        out.requires_grad = track
        out._parents = tuple(parents) if track else ()
        out._backward = backward if track else None
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def item(self) -> float:
        return float(self.data.reshape(()))

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    # Arithmetic sugar; all shape rules live in ops.
    def __add__(self, other):
        from . import ops
        return ops.add_scalar(self, other) if np.isscalar(other) else ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.add_scalar(self, -other) if np.isscalar(other) else ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.add_scalar(ops.neg(self), other)

    def __mul__(self, other):
        from . import ops
        return ops.scale(self, other) if np.isscalar(other) else ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import ops
        return ops.scale(self, 1.0 / other) if np.isscalar(other) else ops.div(self, other)

    def __neg__(self):
        from . import ops
        return ops.neg(self)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class Graph:
    """Topologically ordered view of everything a loss depends on."""

    nodes: list[Tensor]
    parameters: set[int] = field(default_factory=set)

    @classmethod
    def from_loss(cls, loss: Tensor) -> "Graph":
        seen: dict[int, Tensor] = {}
        stack = [loss]
        while stack:
            node = stack.pop()
            if node.id in seen:
                continue
            seen[node.id] = node
            stack.extend(node._parents)
        nodes = [seen[i] for i in sorted(seen)]
        params = {n.id for n in nodes if n.op == "leaf" and n.requires_grad}
        return cls(nodes, params)


def backward(loss: Tensor, params: Iterable[Tensor] | None = None) -> dict[Tensor, np.ndarray]:
    """Reverse-mode sweep from a scalar loss.

    Returns a mapping from each requested parameter to its gradient; parameters
    the loss does not depend on get zeros.  Gradients are also stored on
    ``param.grad`` (overwriting, not accumulating).
    """
    if loss.data.size != 1 or loss.data.ndim > 1:
        raise ValueError(f"backward: loss must be scalar, got shape {loss.shape}")
    graph = Graph.from_loss(loss)
    grads: dict[int, np.ndarray] = {loss.id: np.ones_like(loss.data)}
    for node in reversed(graph.nodes):
        g = grads.get(node.id)
        if g is None or node._backward is None:
            continue
        parent_grads = node._backward(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            if pg.shape != parent.data.shape:
                raise ShapeError(f"backward[{node.op}]", parent.data.shape, pg.shape)
            if parent.id in grads:
                grads[parent.id] = grads[parent.id] + pg
            else:
                grads[parent.id] = pg
        if node.op != "leaf":
            del grads[node.id]

    if params is None:
        params = [n for n in graph.nodes if n.id in graph.parameters]
    out = {}
    for p in params:
        g = grads.get(p.id)
        g = np.zeros_like(p.data) if g is None else g
        p.grad = g
        out[p] = g
    return out

"""Dense tensors with reverse-mode automatic differentiation.

A :class:`Tensor` wraps a numpy array. Operations on tensors that require
gradients record a node holding the parents and a backward closure; calling
:func:`backward` on a scalar walks the recorded graph in reverse topological
order and accumulates ``.grad`` on every leaf that requires it.

Graphs are single-use: once a backward pass has run through a node, its saved
arrays are released and a second backward through it raises.
"""
from __future__ import annotations

import itertools
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

_ids = itertools.count()


class DimensionError(ValueError):
    """Raised when tensor shapes are incompatible for an operation."""


class GraphError(RuntimeError):
    """Raised on misuse of the computation graph (non-scalar loss, reuse)."""


class _Node:
    __slots__ = ("parents", "backward_fn", "freed")

    def __init__(self, parents: Sequence["Tensor"], backward_fn: Callable):
        self.parents = tuple(parents)
        self.backward_fn = backward_fn
        self.freed = False


class Tensor:
    """N-dimensional array that can take part in an autodiff graph.

    Image-like data uses the ``(batch, channels, height, width)`` layout.
    """

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self.node_id = next(_ids)
        self._node: Optional[_Node] = None

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag}, requires_grad={self.requires_grad})"

    def __len__(self) -> int:
        return len(self.data)

    # -- operator sugar ---------------------------------------------------
    def __add__(self, other):
        from . import ops

        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops

        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops

        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops

        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops

        return ops.mul(self, -1.0)

    def reshape(self, *shape):
        from . import ops

        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def sum(self):
        from . import ops

        return ops.sum(self)

    def mean(self):
        from . import ops

        return ops.mean(self)

    def backward(self) -> None:
        backward(self)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x, dtype=dtype if dtype is not None else None)
    if arr.dtype not in (np.float32, np.float64):
        arr = arr.astype(dtype or np.float32)
    return Tensor(arr)


def make_result(data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    """Wrap ``data`` as the output of an op.

    ``backward_fn(grad)`` must return one gradient array (or ``None``) per
    parent, in order. No node is recorded when no parent requires grad.
    """
    out = Tensor(data)
    if no_grad._depth == 0 and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._node = _Node(parents, backward_fn)
    return out


def _toposort(root: Tensor) -> list:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        t, expanded = stack.pop()
        if expanded:
            order.append(t)
            continue
        if id(t) in seen:
            continue
        seen.add(id(t))
        stack.append((t, True))
        if t._node is not None:
            for p in t._node.parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
    return order


def backward(loss: Tensor, wrt: Optional[Iterable[Tensor]] = None) -> dict:
    """Run reverse-mode differentiation from a scalar ``loss``.

    Gradients accumulate into ``.grad`` of every leaf tensor that requires
    grad. Returns a map from tensor to gradient array for ``wrt`` (default:
    all reached leaves); a tensor in ``wrt`` that the loss does not depend on
    maps to zeros.
    """
    if loss.data.size != 1:
        raise GraphError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._node is not None and loss._node.freed:
        raise GraphError("graph already consumed by a previous backward pass; double backward is unsupported")
    if not loss.requires_grad:
        order = []
    else:
        order = _toposort(loss)

    grads = {id(loss): np.ones_like(loss.data)}
    leaves = []
    for t in reversed(order):
        g = grads.pop(id(t), None)
        if t._node is None:
            if g is not None:
                t.grad = g.copy() if t.grad is None else t.grad + g
                leaves.append(t)
            continue
        node = t._node
        if node.freed:
            raise GraphError("graph already consumed by a previous backward pass; double backward is unsupported")
        if g is not None:
            parent_grads = node.backward_fn(g)
            for p, pg in zip(node.parents, parent_grads):
                if pg is None or not p.requires_grad:
                    continue
                if pg.shape != p.shape:
                    raise DimensionError(f"gradient shape {pg.shape} does not match tensor shape {p.shape}")
                key = id(p)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
        node.freed = True
        node.backward_fn = None

    if wrt is None:
        return {t: t.grad for t in leaves}
    out = {}
    for t in wrt:
        out[t] = t.grad if t.grad is not None else np.zeros_like(t.data)
    return out


class no_grad:
    """Context manager marking a block whose results never need gradients.

    Tensors created inside are detached from any graph.
    """

    _depth = 0

    def __enter__(self):
        no_grad._depth += 1
        return self

    def __exit__(self, *exc):
        no_grad._depth -= 1
        return False


def grad_enabled() -> bool:
    return no_grad._depth == 0

"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

Define-by-run: every operation records its inputs and a backward closure on
the produced tensor, so the graph is rebuilt on each forward pass. A single
``backward`` sweep per graph is enforced; rerunning without a fresh forward
raises instead of silently accumulating.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


class Tensor:
    """Dense float64 array with optional gradient and graph bookkeeping."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn", "_consumed")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        _parents: tuple["Tensor", ...] = (),
        _backward_fn: Callable[[np.ndarray], None] | None = None,
    ) -> None:
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward_fn = _backward_fn
        self._consumed = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- arithmetic ----------------------------------------------------------

    def __add__(self, other) -> "Tensor":
        return add(self, other)

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        return mul(self, -1.0)

    def __sub__(self, other) -> "Tensor":
        return add(self, mul(_as_tensor(other), -1.0))

    def __rsub__(self, other) -> "Tensor":
        return add(_as_tensor(other), mul(self, -1.0))

    def __mul__(self, other) -> "Tensor":
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other) -> "Tensor":
        return matmul(self, other)

    def sum(self, axis: int | None = None) -> "Tensor":
        return sum_(self, axis=axis)

    def mean(self, axis: int | None = None) -> "Tensor":
        return mean(self, axis=axis)

    def reshape(self, *shape: int) -> "Tensor":
        return reshape(self, shape)

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() requires a scalar tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def backward(self) -> None:
        """Populate grad on every reachable tensor that requires it."""
        backward(self)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum gradient over axes that were broadcast in the forward pass."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _node(data: np.ndarray, parents: Sequence[Tensor], backward_fn) -> Tensor:
    requires = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=requires, _parents=tuple(parents),
                  _backward_fn=backward_fn if requires else None)


# -- elementwise and linear ops ------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = a.data + b.data
    except ValueError:
        raise ValueError(f"add: shapes {a.shape} and {b.shape} do not broadcast") from None

    def back(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g, b.shape))

    return _node(out, (a, b), back)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = a.data * b.data
    except ValueError:
        raise ValueError(f"mul: shapes {a.shape} and {b.shape} do not broadcast") from None

    def back(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _node(out, (a, b), back)


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError(f"matmul supports 2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def back(g):
        if a.requires_grad:
            _accumulate(a, g @ b.data.T)
        if b.requires_grad:
            _accumulate(b, a.data.T @ g)

    return _node(out, (a, b), back)


def sum_(a, axis: int | None = None) -> Tensor:
    a = _as_tensor(a)
    out = a.data.sum(axis=axis)

    def back(g):
        if not a.requires_grad:
            return
        if axis is None:
            _accumulate(a, np.broadcast_to(g, a.shape).copy())
        else:
            _accumulate(a, np.broadcast_to(np.expand_dims(g, axis), a.shape).copy())

    return _node(out, (a,), back)


def mean(a, axis: int | None = None) -> Tensor:
    a = _as_tensor(a)
    n = a.data.size if axis is None else a.shape[axis]
    return mul(sum_(a, axis=axis), 1.0 / n)


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = _as_tensor(a)
    out = a.data.reshape(shape)

    def back(g):
        if a.requires_grad:
            _accumulate(a, g.reshape(a.shape))

    return _node(out, (a,), back)


def concat(tensors: Sequence["Tensor"], axis: int = -1) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.shape[axis] for t in ts]
    offsets = np.cumsum([0] + sizes)

    def back(g):
        for t, lo, hi in zip(ts, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                _accumulate(t, np.take(g, np.arange(lo, hi), axis=axis))

    return _node(out, tuple(ts), back)


def sin(a) -> Tensor:
    a = _as_tensor(a)
    out = np.sin(a.data)

    def back(g):
        if a.requires_grad:
            _accumulate(a, g * np.cos(a.data))

    return _node(out, (a,), back)


def cos(a) -> Tensor:
    a = _as_tensor(a)
    out = np.cos(a.data)

    def back(g):
        if a.requires_grad:
            _accumulate(a, -g * np.sin(a.data))

    return _node(out, (a,), back)


def exp(a) -> Tensor:
    a = _as_tensor(a)
    out = np.exp(a.data)

    def back(g):
        if a.requires_grad:
            _accumulate(a, g * out)

    return _node(out, (a,), back)


def log(a) -> Tensor:
    a = _as_tensor(a)
    out = np.log(a.data)

    def back(g):
        if a.requires_grad:
            _accumulate(a, g / a.data)

    return _node(out, (a,), back)


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    out = np.tanh(a.data)

    def back(g):
        if a.requires_grad:
            _accumulate(a, g * (1.0 - out * out))

    return _node(out, (a,), back)


def relu(a) -> Tensor:
    a = _as_tensor(a)
    out = np.maximum(a.data, 0.0)

    def back(g):
        if a.requires_grad:
            _accumulate(a, g * (a.data > 0.0))

    return _node(out, (a,), back)


def softmax(a, axis: int = -1) -> Tensor:
    a = _as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        if a.requires_grad:
            inner = (g * out).sum(axis=axis, keepdims=True)
            _accumulate(a, out * (g - inner))

    return _node(out, (a,), back)


def log_softmax(a, axis: int = -1) -> Tensor:
    a = _as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    soft = np.exp(out)

    def back(g):
        if a.requires_grad:
            _accumulate(a, g - soft * g.sum(axis=axis, keepdims=True))

    return _node(out, (a,), back)


def gather_rows(a, index) -> Tensor:
    """Select rows a[index]; gradients scatter-add back into the source."""
    a = _as_tensor(a)
    idx = np.asarray(index, dtype=np.int64)
    if idx.ndim != 1:
        raise ValueError(f"gather_rows expects a 1-D index, got shape {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise ValueError(f"gather_rows: index out of range for {a.shape[0]} rows")
    out = a.data[idx]

    def back(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            np.add.at(full, idx, g)
            _accumulate(a, full)

    return _node(out, (a,), back)


def gather_elements(a, index) -> Tensor:
    """Pick a[i, index[i]] from a 2-D tensor, one element per row."""
    a = _as_tensor(a)
    idx = np.asarray(index, dtype=np.int64)
    if a.data.ndim != 2 or idx.ndim != 1 or idx.shape[0] != a.shape[0]:
        raise ValueError(f"gather_elements: incompatible shapes {a.shape}, {idx.shape}")
    rows = np.arange(a.shape[0])
    out = a.data[rows, idx]

    def back(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            np.add.at(full, (rows, idx), g)
            _accumulate(a, full)

    return _node(out, (a,), back)


def square(a) -> Tensor:
    return mul(a, a)


# -- backward engine -----------------------------------------------------------


def backward(loss: Tensor) -> None:
    """Run reverse-mode accumulation from a scalar loss.

    Raises if the loss is not scalar or if any tensor of the graph already
    participated in a backward pass (stale tape).
    """
    if loss.data.size != 1:
        raise ValueError(f"backward requires a scalar loss, got shape {loss.shape}")

    topo: list[Tensor] = []
    visited: set[int] = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in visited or not node.requires_grad:
            continue
        if node._consumed:
            raise RuntimeError(
                "backward called on a tape that was already consumed; rerun the forward pass"
            )
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            stack.append((p, False))

    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._parents:
            node._consumed = True  # leaves stay reusable across tapes
        if node._backward_fn is not None:
            node._backward_fn(node.grad)


def parameter(data) -> Tensor:
    """Trainable leaf tensor."""
    return Tensor(data, requires_grad=True)


def zero_grads(params) -> None:
    for p in params:
        p.grad = None

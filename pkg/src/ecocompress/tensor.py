"""Dense float64 tensors with reverse-mode automatic differentiation.

Every operation returns a new :class:`Tensor` that remembers its inputs and a
local backward rule.  :func:`backward` linearises the recorded graph into a
:class:`Tape` (topological order) and walks it once in reverse.

Broadcasting is limited to scalar-with-tensor; anything else needs an explicit
:func:`reshape` / :func:`expand`.
"""
from __future__ import annotations

import math
from contextlib import contextmanager
from typing import Callable, Iterable, Optional, Sequence, Union

import numpy as np

from .errors import ContractError, DimensionError, DomainError

LN2 = math.log(2.0)

ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence]

_recording = True


@contextmanager
def no_grad():
    """Evaluate without recording backward rules (evaluation / monitoring)."""
    global _recording
    prev, _recording = _recording, False
    try:
        yield
    finally:
        _recording = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple = ()
        self._backward: Optional[Callable] = None
        self.op = "leaf"

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    # -- operators -----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return negate(self)

    def __matmul__(self, other):
        return matmul(self, other)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def as_tensor(x: ArrayLike) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: tuple, rule: Callable, op: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.op = op
    out.requires_grad = _recording and any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = parents
        out._backward = rule
    else:
        out._parents = ()
        out._backward = None
    return out


# ---------------------------------------------------------------------------
# tape & backward
# ---------------------------------------------------------------------------
class Tape:
    """Topologically ordered list of the differentiable nodes feeding ``root``."""

    def __init__(self, nodes: list):
        self.nodes = nodes

    @classmethod
    def from_root(cls, root: Tensor) -> "Tape":
        order: list = []
        seen: set = set()
        stack = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        return cls(order)

    def __len__(self) -> int:
        return len(self.nodes)

    def backward(self, seed: np.ndarray) -> None:
        root = self.nodes[-1]
        pending = {id(root): seed}
        for node in reversed(self.nodes):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            if node.is_leaf:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                pending[key] = pg if key not in pending else pending[key] + pg


def backward(root: Tensor) -> None:
    """Accumulate d(root)/d(leaf) into ``leaf.grad`` for every reachable leaf.

    Gradients accumulate across calls; use :meth:`Tensor.zero_grad` to reset.
    """
    if root.shape != ():
        raise ContractError(f"backward() needs a scalar root, got shape {root.shape}")
    if not root.requires_grad:
        raise ContractError("backward() root does not depend on any requires_grad tensor")
    Tape.from_root(root).backward(np.ones((), dtype=np.float64))


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------
def _pair(a: ArrayLike, b: ArrayLike, op: str) -> tuple:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape and a.shape != () and b.shape != ():
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} differ (only scalar broadcast allowed)")
    return a, b


def _fit(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    return np.asarray(g.sum()).reshape(shape)


def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _pair(a, b, "add")
    return _result(a.data + b.data, (a, b),
                   lambda g: (_fit(g, a.shape), _fit(g, b.shape)), "add")


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _pair(a, b, "sub")
    return _result(a.data - b.data, (a, b),
                   lambda g: (_fit(g, a.shape), _fit(-g, b.shape)), "sub")


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _pair(a, b, "mul")
    return _result(a.data * b.data, (a, b),
                   lambda g: (_fit(g * b.data, a.shape), _fit(g * a.data, b.shape)), "mul")


def div(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _pair(a, b, "div")
    if np.any(b.data == 0):
        raise DomainError("div: division by zero")
    out = a.data / b.data

    def rule(g):
        return _fit(g / b.data, a.shape), _fit(-g * out / b.data, b.shape)

    return _result(out, (a, b), rule, "div")


def negate(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    return _result(-x.data, (x,), lambda g: (-g,), "negate")


def scale(x: ArrayLike, c: float) -> Tensor:
    x = as_tensor(x)
    c = float(c)
    return _result(x.data * c, (x,), lambda g: (g * c,), "scale")


def exp(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)
    return _result(out, (x,), lambda g: (g * out,), "exp")


def log2(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    if np.any(x.data <= 0):
        raise DomainError("log2: input must be strictly positive")
    return _result(np.log2(x.data), (x,), lambda g: (g / (x.data * LN2),), "log2")


def sqrt(x: ArrayLike) -> Tensor:
    """Square root; the derivative at exactly 0 is taken as 0 instead of inf."""
    x = as_tensor(x)
    if np.any(x.data < 0):
        raise DomainError("sqrt: input must be nonnegative")
    out = np.sqrt(x.data)

    def rule(g):
        safe = np.where(out > 0, out, 1.0)
        return (np.where(out > 0, g / (2.0 * safe), 0.0),)

    return _result(out, (x,), rule, "sqrt")


def square(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    return _result(x.data * x.data, (x,), lambda g: (2.0 * g * x.data,), "square")


def relu(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return _result(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,), "relu")


def clip_min(x: ArrayLike, lo: float) -> Tensor:
    x = as_tensor(x)
    mask = x.data >= lo
    return _result(np.where(mask, x.data, lo), (x,), lambda g: (g * mask,), "clip_min")


_TINY = np.finfo(np.float64).tiny


def xlog2x(x: ArrayLike) -> Tensor:
    """Elementwise ``x * log2(x)`` with ``0 log 0 = 0``."""
    x = as_tensor(x)
    if np.any(x.data < 0):
        raise DomainError("xlog2x: input must be nonnegative")
    pos = x.data > 0
    safe = np.where(pos, x.data, 1.0)
    out = np.where(pos, x.data * np.log2(safe), 0.0)

    def rule(g):
        return (g * (np.log2(np.maximum(x.data, _TINY)) + 1.0 / LN2),)

    return _result(out, (x,), rule, "xlog2x")


_UNARY = {
    "exp": exp, "log2": log2, "sqrt": sqrt, "square": square,
    "relu": relu, "negate": negate, "xlog2x": xlog2x,
}
_BINARY = {"add": add, "sub": sub, "mul": mul, "div": div}


def elementwise(op: str, *args, **kwargs) -> Tensor:
    """Dispatch by name: binary ``add/sub/mul/div``, unary ops, or ``scale(x, c)``."""
    if op in _BINARY:
        return _BINARY[op](*args)
    if op in _UNARY:
        return _UNARY[op](*args)
    if op == "scale":
        return scale(*args, **kwargs)
    raise ContractError(f"unknown elementwise op {op!r}")


# ---------------------------------------------------------------------------
# linear algebra, reductions, shape
# ---------------------------------------------------------------------------
def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply shapes {a.shape} and {b.shape}")
    return _result(a.data @ b.data, (a, b),
                   lambda g: (g @ b.data.T, a.data.T @ g), "matmul")


def sum(x: ArrayLike, axis: Optional[int] = None) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    out = x.data.sum(axis=axis)

    def rule(g):
        if axis is None:
            return (np.broadcast_to(g, x.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),)

    return _result(np.asarray(out), (x,), rule, "sum")


def mean(x: ArrayLike, axis: Optional[int] = None) -> Tensor:
    x = as_tensor(x)
    count = x.size if axis is None else x.shape[axis]
    if count == 0:
        raise ContractError("mean of an empty axis")
    return scale(sum(x, axis), 1.0 / count)


def reshape(x: ArrayLike, shape: Iterable[int]) -> Tensor:
    x = as_tensor(x)
    shape = tuple(shape)
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"reshape: cannot view {x.shape} as {shape}") from exc
    return _result(out, (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    if x.data.ndim != 2:
        raise DimensionError(f"transpose expects a matrix, got shape {x.shape}")
    return _result(x.data.T.copy(), (x,), lambda g: (g.T,), "transpose")


def expand(x: ArrayLike, shape: Iterable[int]) -> Tensor:
    """Repeat size-1 axes of ``x`` up to ``shape`` (same rank required)."""
    x = as_tensor(x)
    shape = tuple(shape)
    if len(shape) != x.data.ndim or any(s != t and s != 1 for s, t in zip(x.shape, shape)):
        raise DimensionError(f"expand: cannot expand {x.shape} to {shape}")
    axes = tuple(i for i, (s, t) in enumerate(zip(x.shape, shape)) if s != t)
    out = np.broadcast_to(x.data, shape).copy()
    return _result(out, (x,), lambda g: (g.sum(axis=axes, keepdims=True),), "expand")


def softmax(x: ArrayLike, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=axis, keepdims=True)

    def rule(g):
        return (p * (g - (g * p).sum(axis=axis, keepdims=True)),)

    return _result(p, (x,), rule, "softmax")


def softmax_cross_entropy(logits: ArrayLike, labels) -> Tensor:
    """Mean over the batch of ``-log2 softmax(logits)[label]`` (bits)."""
    logits = as_tensor(logits)
    if logits.data.ndim != 2:
        raise DimensionError(f"softmax_cross_entropy expects [batch x classes], got {logits.shape}")
    batch, classes = logits.shape
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if batch < 1 or labels.shape[0] != batch:
        raise DimensionError(f"{labels.shape[0]} labels for a batch of {batch}")
    if labels.min() < 0 or labels.max() >= classes:
        raise IndexError(f"label out of range [0, {classes})")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(batch)
    nats = lse - z[rows, labels]
    out = np.asarray(nats.mean() / LN2)

    def rule(g):
        p = np.exp(z - lse[:, None])
        p[rows, labels] -= 1.0
        return (p * (g / (batch * LN2)),)

    return _result(out, (logits,), rule, "softmax_cross_entropy")

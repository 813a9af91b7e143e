"""Minimal reverse-mode automatic differentiation over numpy arrays.

Every operation produces a :class:`Tensor` that remembers its parents and a
closure mapping the output gradient to per-parent gradients.  Calling
``backward()`` on a scalar walks the graph in reverse topological order.

Values are stored as float64.  All op outputs are checked for finiteness and
a :class:`NonFiniteError` naming the op is raised on NaN/Inf.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

DTYPE = np.float64

_grad_enabled = True


class NonFiniteError(FloatingPointError):
    """Raised when an operation produces NaN or Inf."""

    def __init__(self, op: str, detail: str = ""):
        self.op = op
        msg = f"non-finite value produced by op '{op}'"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference only)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, op: str = "leaf"):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward = None
        self.op = op

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __len__(self) -> int:
        return len(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op!r})"

    # -- operator sugar ---------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    # -- backward ---------------------------------------------------------
    def backward(self, grad=None) -> None:
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every leaf that
        requires a gradient."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order = _topological(self)
        grads = {id(self): np.asarray(grad, dtype=DTYPE)}
        owned: set = set()  # keys whose buffer we allocated and may add into in place
        for node in order:
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if isinstance(g, _OuterProducts):
                g = g.materialize()
            if node._backward is None:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if isinstance(pg, _OuterProducts):
                    prev = grads.get(key)
                    if prev is None:
                        grads[key] = pg
                    elif isinstance(prev, _OuterProducts):
                        prev.extend(pg)
                    else:
                        pg.dense = prev
                        grads[key] = pg
                    continue
                if isinstance(grads.get(key), _OuterProducts):
                    grads[key].add_dense(pg)
                elif key not in grads:
                    grads[key] = pg
                elif key in owned and grads[key].shape == np.shape(pg):
                    grads[key] += pg
                else:
                    grads[key] = grads[key] + pg
                    owned.add(key)


class _OuterProducts:
    """Deferred sum of ``a_i.T @ g_i`` terms.

    A weight shared across many time steps receives one small product per
    step; stacking them into a single product is much faster.
    """

    __slots__ = ("lhs", "rhs", "dense")

    def __init__(self, lhs: np.ndarray, rhs: np.ndarray):
        self.lhs, self.rhs, self.dense = [lhs], [rhs], None

    def extend(self, other: "_OuterProducts") -> None:
        self.lhs += other.lhs
        self.rhs += other.rhs
        if other.dense is not None:
            self.add_dense(other.dense)

    def add_dense(self, g: np.ndarray) -> None:
        self.dense = g.copy() if self.dense is None else self.dense + g

    def materialize(self) -> np.ndarray:
        if len(self.lhs) == 1:
            out = self.lhs[0].T @ self.rhs[0]
        else:
            out = np.concatenate(self.lhs).T @ np.concatenate(self.rhs)
        return out if self.dense is None else out + self.dense


def _topological(root: Tensor) -> list:
    order: list = []
    visited: set = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))
    order.reverse()
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make_op(data: np.ndarray, parents: Sequence[Tensor],
            backward: Callable[[np.ndarray], Iterable], op: str) -> Tensor:
    """Wrap ``data`` as the output of a differentiable op.

    ``backward`` receives the upstream gradient and returns one gradient (or
    None) per parent, in order.
    """
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(op)
    out = Tensor(data, op=op)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# -- elementwise arithmetic -----------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return make_op(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return make_op(a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return make_op(a.data * b.data, (a, b),
                   lambda g: (_unbroadcast(g * b.data, a.shape),
                              _unbroadcast(g * a.data, b.shape)), "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data
    return make_op(out, (a, b),
                   lambda g: (_unbroadcast(g / b.data, a.shape),
                              _unbroadcast(-g * out / b.data, b.shape)), "div")


def neg(a: Tensor) -> Tensor:
    return make_op(-a.data, (a,), lambda g: (-g,), "neg")


def square(a: Tensor) -> Tensor:
    return make_op(a.data * a.data, (a,), lambda g: (2.0 * a.data * g,), "square")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return make_op(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.data)
    return make_op(out, (a,), lambda g: (g / a.data,), "log")


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return make_op(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def sigmoid(a: Tensor) -> Tensor:
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return make_op(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def leaky_relu(a: Tensor, slope: float = 0.01) -> Tensor:
    scale = np.where(a.data > 0, 1.0, slope)
    return make_op(a.data * scale, (a,), lambda g: (g * scale,), "leaky_relu")


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    inside = (a.data >= lo) & (a.data <= hi)
    return make_op(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,), "clamp")


# -- linear algebra and reductions ----------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if b.ndim != 2:
        raise ValueError("matmul expects a 2-D right operand")
    if a.shape[-1] != b.shape[0]:
        raise ValueError(f"matmul width mismatch: {a.shape} @ {b.shape}")

    def backward(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = _OuterProducts(a.data.reshape(-1, a.shape[-1]), g.reshape(-1, g.shape[-1]))
        return ga, gb

    return make_op(a.data @ b.data, (a, b), backward, "matmul")


def _rows(x: np.ndarray) -> np.ndarray:
    return x.reshape(-1, x.shape[-1])


def linear(x, w: Tensor, b: Tensor, slope: float | None = None) -> Tensor:
    """``x @ w + b``, followed by a leaky rectifier when ``slope`` is given.

    One graph node instead of three; dense stacks are the bulk of every model.
    """
    x = as_tensor(x)
    if x.shape[-1] != w.shape[0]:
        raise ValueError(f"linear width mismatch: {x.shape} @ {w.shape}")
    y = x.data @ w.data + b.data
    scale = None
    if slope is not None:
        scale = np.where(y > 0, 1.0, slope)
        y = y * scale

    def backward(g):
        if scale is not None:
            g = g * scale
        gx = g @ w.data.T if x.requires_grad else None
        return gx, _OuterProducts(_rows(x.data), _rows(g)), _rows(g).sum(axis=0)

    return make_op(y, (x, w, b), backward, "linear")


def gru_cell(x, h, w_ih: Tensor, w_hh: Tensor, b_ih: Tensor, b_hh: Tensor) -> Tensor:
    """Fused GRU step; packed gate layout is (reset, update, candidate).

    ``h' = n + u * (h - n)`` with ``r = sigmoid(.)``, ``u = sigmoid(.)`` and
    ``n = tanh(x W_n + b_n + r * (h U_n + c_n))``.
    """
    x, h = as_tensor(x), as_tensor(h)
    H = w_hh.shape[0]
    gi = x.data @ w_ih.data + b_ih.data
    gh = h.data @ w_hh.data + b_hh.data
    r = 0.5 * (1.0 + np.tanh(0.5 * (gi[..., :H] + gh[..., :H])))
    u = 0.5 * (1.0 + np.tanh(0.5 * (gi[..., H:2 * H] + gh[..., H:2 * H])))
    gh_n = gh[..., 2 * H:]
    n = np.tanh(gi[..., 2 * H:] + r * gh_n)
    out = n + u * (h.data - n)

    def backward(g):
        dn = g * (1.0 - u) * (1.0 - n * n)
        du = g * (h.data - n) * u * (1.0 - u)
        dr = dn * gh_n * r * (1.0 - r)
        dgi = np.concatenate([dr, du, dn], axis=-1)
        dgh = np.concatenate([dr, du, dn * r], axis=-1)
        gx = dgi @ w_ih.data.T if x.requires_grad else None
        gh_ = g * u + dgh @ w_hh.data.T if h.requires_grad else None
        return (gx, gh_,
                _OuterProducts(_rows(x.data), _rows(dgi)),
                _OuterProducts(_rows(h.data), _rows(dgh)),
                _rows(dgi).sum(axis=0), _rows(dgh).sum(axis=0))

    return make_op(out, (x, h, w_ih, w_hh, b_ih, b_hh), backward, "gru_cell")


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return make_op(out, (a,), backward, "sum")


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / n)


def reshape(a: Tensor, shape) -> Tensor:
    return make_op(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def _is_basic_index(idx) -> bool:
    parts = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(p, (int, np.integer, slice)) or p is Ellipsis or p is None
               for p in parts)


def getitem(a: Tensor, idx) -> Tensor:
    basic = _is_basic_index(idx)

    def backward(g):
        full = np.zeros_like(a.data)
        if basic:
            full[idx] = g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return make_op(a.data[idx], (a,), backward, "getitem")


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return np.split(g, splits, axis=axis)

    return make_op(np.concatenate([t.data for t in tensors], axis=axis),
                   tensors, backward, "concat")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]

    def backward(g):
        return [np.take(g, i, axis=axis) for i in range(len(tensors))]

    return make_op(np.stack([t.data for t in tensors], axis=axis), tensors, backward, "stack")

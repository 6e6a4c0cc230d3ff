"""Eager reverse-mode differentiation over dense numpy arrays.

Every differentiable operation records its parents and a closure mapping the
output cotangent to parent cotangents. ``backward`` walks the recorded graph in
reverse topological order. There is no compilation step; the tape is simply the
object graph hanging off the loss.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

_GRAD_ENABLED = True
_DEFAULT_DTYPE = np.float64


class NonFiniteError(FloatingPointError):
    """Raised when a loss or intermediate value is NaN or infinite."""


class UnsupportedOpError(RuntimeError):
    """Raised when ``backward`` meets a node it has no derivative rule for."""


# Operations ``backward`` knows how to differentiate. Nodes created outside
# this module with an unknown ``op`` are rejected.
SUPPORTED_OPS = frozenset({
    "add", "sub", "neg", "mul", "div", "matmul", "linear", "concat",
    "relu", "sigmoid", "log_sigmoid", "exp", "log", "softmax", "log_softmax",
    "logsumexp", "max", "sum", "mean", "layer_norm", "reshape", "transpose",
    "broadcast_to",
})


def set_default_dtype(dtype) -> None:
    global _DEFAULT_DTYPE
    _DEFAULT_DTYPE = np.dtype(dtype).type


def default_dtype():
    return _DEFAULT_DTYPE


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block."""
    global _GRAD_ENABLED
    previous = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = previous


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    """A dense array plus the bookkeeping needed for reverse-mode AD.

    Identity semantics are deliberate: tensors hash by object identity so they
    can key gradient dictionaries, and ``==`` is not overloaded.
    """

    __slots__ = ("data", "requires_grad", "grad", "name", "op", "_parents", "_backward")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(_DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name
        self.op = "leaf"
        self._parents: tuple = ()
        self._backward = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.item())

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self.op}{label})"

    # Operator sugar. Constants are wrapped on the fly.
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

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def max(self, axis=None, keepdims=False):
        return max_(self, axis, keepdims)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out.op = op
    requires = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    out.requires_grad = requires
    if requires:
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    if lead > 0:
        g = g.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _norm_axis(axis, ndim):
    if axis is None:
        return None
    if isinstance(axis, int):
        return axis % ndim
    return tuple(a % ndim for a in axis)


# ---------------------------------------------------------------------------
# elementwise arithmetic

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), bw, "sub")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(a.data * b.data, (a, b), bw, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def bw(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(out, (a, b), bw, "div")


# ---------------------------------------------------------------------------
# linear algebra

def matmul(a, b) -> Tensor:
    """Batched matrix product with numpy broadcasting over leading axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul requires operands with ndim >= 2")

    def bw(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        if b.requires_grad:
            if b.ndim == 2:
                k = a.shape[-1]
                gb = a.data.reshape(-1, k).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return _make(a.data @ b.data, (a, b), bw, "matmul")


def linear(x, w, b=None) -> Tensor:
    """``x @ w + b`` over the last axis of ``x``; ``w`` is (in, out)."""
    x, w = as_tensor(x), as_tensor(w)
    parents = (x, w) if b is None else (x, w, as_tensor(b))
    k = x.shape[-1]
    lead = x.shape[:-1]
    # Flatten leading axes: one 2-D GEMM is much faster than a broadcast batch.
    x2 = x.data.reshape(-1, k)
    out = x2 @ w.data
    if b is not None:
        out += parents[2].data
    out = out.reshape(lead + (w.shape[-1],))

    def bw(g):
        g2 = g.reshape(-1, g.shape[-1])
        gx = (g2 @ w.data.T).reshape(x.shape) if x.requires_grad else None
        gw = (x2.T @ g2) if w.requires_grad else None
        if b is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return _make(out, parents, bw, "linear")


def concat(tensors: Iterable, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    ax = axis % ts[0].ndim
    sizes = [t.shape[ax] for t in ts]
    cuts = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, cuts, axis=ax))

    return _make(np.concatenate([t.data for t in ts], axis=ax), ts, bw, "concat")


# ---------------------------------------------------------------------------
# nonlinearities

def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return _make(x.data * mask, (x,),
                 lambda g: (g * mask,), "relu")


def _sigmoid_np(v: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * v))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    s = _sigmoid_np(x.data)
    return _make(s, (x,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def log_sigmoid(x) -> Tensor:
    """Stable ``log(sigmoid(x))``."""
    x = as_tensor(x)
    v = x.data
    out = np.minimum(v, 0.0) - np.log1p(np.exp(-np.abs(v)))
    return _make(out, (x,), lambda g: (g * _sigmoid_np(-v),), "log_sigmoid")


def exp(x) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)
    return _make(out, (x,), lambda g: (g * out,), "exp")


def log(x) -> Tensor:
    x = as_tensor(x)
    return _make(np.log(x.data), (x,), lambda g: (g / x.data,), "log")


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _make(y, (x,), bw, "softmax")


def log_softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    m = x.data.max(axis=axis, keepdims=True)
    lse = m + np.log(np.exp(x.data - m).sum(axis=axis, keepdims=True))
    out = x.data - lse

    def bw(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return _make(out, (x,), bw, "log_softmax")


def logsumexp(x, axis: int = -1, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    m = x.data.max(axis=axis, keepdims=True)
    lse = m + np.log(np.exp(x.data - m).sum(axis=axis, keepdims=True))

    def bw(g):
        gk = g if keepdims else np.expand_dims(g, axis)
        return (gk * np.exp(x.data - lse),)

    out = lse if keepdims else np.squeeze(lse, axis=axis)
    return _make(out, (x,), bw, "logsumexp")


# ---------------------------------------------------------------------------
# reductions

def max_(x, axis=None, keepdims: bool = False) -> Tensor:
    """Max-reduction; the cotangent goes to the first maximiser only."""
    x = as_tensor(x)
    if axis is None:
        flat = int(np.argmax(x.data))
        out = x.data.reshape(-1)[flat]
        if keepdims:
            out = out.reshape((1,) * x.ndim)

        def bw_all(g):
            gx = np.zeros_like(x.data)
            gx.reshape(-1)[flat] = np.asarray(g).reshape(())
            return (gx,)

        return _make(np.asarray(out), (x,), bw_all, "max")
    if not isinstance(axis, int):
        raise ValueError("max_ reduces over a single axis")
    ax = axis % x.ndim
    idx = np.expand_dims(np.argmax(x.data, axis=ax), ax)
    out = np.take_along_axis(x.data, idx, axis=ax)

    def bw(g):
        gk = g if keepdims else np.expand_dims(g, ax)
        gx = np.zeros_like(x.data)
        np.put_along_axis(gx, idx, gk, axis=ax)
        return (gx,)

    return _make(out if keepdims else np.squeeze(out, axis=ax), (x,), bw, "max")


def sum_(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    ax = _norm_axis(axis, x.ndim)

    def bw(g):
        if ax is not None and not keepdims:
            g = np.expand_dims(g, ax)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make(np.asarray(x.data.sum(axis=ax, keepdims=keepdims)), (x,), bw, "sum")


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    ax = _norm_axis(axis, x.ndim)
    if ax is None:
        count = x.data.size
    elif isinstance(ax, int):
        count = x.shape[ax]
    else:
        count = int(np.prod([x.shape[a] for a in ax]))

    def bw(g):
        if ax is not None and not keepdims:
            g = np.expand_dims(g, ax)
        return (np.broadcast_to(g / count, x.shape).copy(),)

    return _make(np.asarray(x.data.mean(axis=ax, keepdims=keepdims)), (x,), bw, "mean")


def layer_norm(x, gamma=None, beta=None, eps: float = 1e-6) -> Tensor:
    """Normalise over the last axis, then apply the optional affine map."""
    x = as_tensor(x)
    parents = [x]
    if gamma is not None:
        parents.append(as_tensor(gamma))
    if beta is not None:
        parents.append(as_tensor(beta))
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    out = xhat
    if gamma is not None:
        out = out * parents[1].data
    if beta is not None:
        out = out + parents[-1].data
    hdim = x.shape[-1]

    def bw(g):
        grads = []
        dxhat = g * parents[1].data if gamma is not None else g
        dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        grads.append(dx)
        if gamma is not None:
            grads.append((g * xhat).reshape(-1, hdim).sum(axis=0).reshape(parents[1].shape))
        if beta is not None:
            grads.append(g.reshape(-1, hdim).sum(axis=0).reshape(parents[-1].shape))
        return tuple(grads)

    return _make(out, parents, bw, "layer_norm")


# ---------------------------------------------------------------------------
# shape manipulation

def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    src = x.shape
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(src),), "reshape")


def expand_dims(x, axis: int) -> Tensor:
    x = as_tensor(x)
    return reshape(x, np.expand_dims(x.data, axis).shape)


def transpose(x, axes=None) -> Tensor:
    x = as_tensor(x)
    axes = tuple(range(x.ndim))[::-1] if axes is None else tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _make(x.data.transpose(axes), (x,), lambda g: (g.transpose(inverse),), "transpose")


def broadcast_to(x, shape) -> Tensor:
    x = as_tensor(x)
    src = x.shape
    return _make(np.broadcast_to(x.data, shape).copy(), (x,),
                 lambda g: (_unbroadcast(g, src),), "broadcast_to")


# ---------------------------------------------------------------------------
# the backward pass

def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
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
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Differentiate a scalar ``loss`` w.r.t. every reachable leaf needing grad.

    Returns a mapping leaf tensor -> gradient array; the same arrays are also
    accumulated into ``leaf.grad``.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not np.all(np.isfinite(loss.data)):
        raise NonFiniteError(f"loss is not finite: {float(loss.data)}")
    if not loss.requires_grad:
        return {}
    cot: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[Tensor, np.ndarray] = {}
    for node in reversed(_topological_order(loss)):
        g = cot.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            leaves[node] = g
            node.grad = g if node.grad is None else node.grad + g
            continue
        if node.op not in SUPPORTED_OPS:
            raise UnsupportedOpError(f"no derivative rule for op {node.op!r}")
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            prev = cot.get(key)
            cot[key] = pg if prev is None else prev + pg
    return leaves

"""Reverse-mode automatic differentiation over a small, fixed op set.

Every op records its parents and a closure mapping the output gradient to
parent gradients. ``Tensor.backward`` walks the recorded graph in reverse
topological order and accumulates into ``.grad``. Broadcasting is limited
to adding a bias along the last axis; anything else must go through an
explicit :func:`expand`.
"""

from __future__ import annotations

import contextlib

import numpy as np

_GRAD_ENABLED = True


class ShapeError(ValueError):
    pass


class GraphError(RuntimeError):
    pass


@contextlib.contextmanager
def no_grad():
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op", "_consumed", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward = None
        self._op = "leaf"
        self._consumed = False
        self.name = name

    # basic protocol
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self._op})"

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    # operators
    def __add__(self, o):
        return add(self, _wrap(o, self))

    __radd__ = __add__

    def __sub__(self, o):
        return sub(self, _wrap(o, self))

    def __rsub__(self, o):
        return sub(_wrap(o, self), self)

    def __mul__(self, o):
        if isinstance(o, Tensor):
            return mul(self, o)
        return scale(self, float(o))

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, o):
        return matmul(self, o)

    def __getitem__(self, key):
        return take(self, key)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    # autodiff
    def backward(self, grad: np.ndarray | None = None) -> None:
        if self._consumed:
            raise GraphError("backward called twice on the same graph; rebuild the loss first")
        if grad is None:
            if self.data.size != 1:
                raise ShapeError(f"backward: implicit gradient needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)
        order = _topo(self)
        for node in order:
            if node._consumed:
                raise GraphError(f"graph node {node._op} was already back-propagated")
        grads = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for p, pg in zip(node._parents, node._backward(g)):
                if pg is None or not p.requires_grad:
                    continue
                k = id(p)
                grads[k] = pg if k not in grads else grads[k] + pg
        for node in order:
            if node._backward is not None:
                node._consumed = True
                node._backward = None
                node._parents = ()


def _topo(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
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


class Parameter(Tensor):
    __slots__ = ()

    def __init__(self, data, name: str | None = None):
        super().__init__(np.array(data, dtype=np.float64), requires_grad=True, name=name)


def _wrap(o, like: Tensor) -> Tensor:
    if isinstance(o, Tensor):
        return o
    return Tensor(np.full(like.shape, float(o)))


def constant(data) -> Tensor:
    return Tensor(data)


def _make(data, parents, backward, op) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
        out._op = op
    return out


def _check(op, cond, *shapes):
    if not cond:
        raise ShapeError(f"{op}: incompatible shapes " + " and ".join(str(s) for s in shapes))


# ----------------------------------------------------------------- ops

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """(n,k)@(k,m), (B,n,k)@(B,k,m) or (B,n,k)@(k,m)."""
    A, Bm = a.data, b.data
    ok = A.ndim in (2, 3) and Bm.ndim in (2, 3) and A.shape[-1] == Bm.shape[-2] and \
        (Bm.ndim == 2 or (A.ndim == 3 and A.shape[0] == Bm.shape[0]))
    _check("matmul", ok, a.shape, b.shape)
    out = A @ Bm

    def back(g):
        ga = g @ np.swapaxes(Bm, -1, -2) if a.requires_grad else None
        gb = None
        if b.requires_grad:
            if Bm.ndim == 2 and A.ndim == 3:
                gb = A.reshape(-1, A.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = np.swapaxes(A, -1, -2) @ g
        return ga, gb

    return _make(out, (a, b), back, "matmul")


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape == b.shape:
        return _make(a.data + b.data, (a, b), lambda g: (g, g), "add")
    _check("add", b.ndim == 1 and a.ndim >= 1 and a.shape[-1] == b.shape[0], a.shape, b.shape)
    axes = tuple(range(a.ndim - 1))
    return _make(a.data + b.data, (a, b), lambda g: (g, g.sum(axis=axes)), "add_bias")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check("sub", a.shape == b.shape, a.shape, b.shape)
    return _make(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check("elementwise_mul", a.shape == b.shape, a.shape, b.shape)
    A, Bd = a.data, b.data
    def back(g):
        return (g * Bd if a.requires_grad else None), (g * A if b.requires_grad else None)

    return _make(A * Bd, (a, b), back, "mul")


def scale(a: Tensor, c: float) -> Tensor:
    return _make(a.data * c, (a,), lambda g: (g * c,), "scale")


def concat(ts, axis: int = -1) -> Tensor:
    ts = list(ts)
    datas = [t.data for t in ts]
    nd = datas[0].ndim
    ax = axis % nd
    ok = all(d.ndim == nd and d.shape[:ax] + d.shape[ax + 1:] == datas[0].shape[:ax] + datas[0].shape[ax + 1:]
             for d in datas)
    _check("concat", ok, *[t.shape for t in ts])
    out = np.concatenate(datas, axis=ax)
    cuts = np.cumsum([d.shape[ax] for d in datas])[:-1]

    def back(g):
        return tuple(np.split(g, cuts, axis=ax))

    return _make(out, ts, back, "concat")


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _make(y, (a,), lambda g: (g * (1.0 - y * y),), "tanh")


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    e = np.exp(-np.abs(x))
    y = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _make(y, (a,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def relu(a: Tensor) -> Tensor:
    m = a.data > 0
    return _make(a.data * m, (a,), lambda g: (g * m,), "relu")


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    return _make(y, (a,), lambda g: (g * y,), "exp")


def log(a: Tensor) -> Tensor:
    x = a.data
    if (x <= 0).any():
        raise ValueError("log: non-positive input")
    return _make(np.log(x), (a,), lambda g: (g / x,), "log")


def softmax(a: Tensor, axis: int = -1, mask: np.ndarray | None = None) -> Tensor:
    """Max-subtracted softmax; entries where ``mask`` is False get exactly 0."""
    x = a.data
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
        if not mask.any(axis=axis).all():
            raise ValueError("softmax: a slice has every entry masked")
        x = np.where(mask, x, -np.inf)
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _make(y, (a,), back, "softmax")


def embedding(weight: Tensor, idx) -> Tensor:
    idx = np.asarray(idx, dtype=np.int64)
    V = weight.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= V):
        raise IndexError(f"embedding_lookup: index outside vocabulary of {V}")

    def back(g):
        gw = np.zeros_like(weight.data)
        np.add.at(gw, idx, g)
        return (gw,)

    return _make(weight.data[idx], (weight,), back, "embedding")


def pick(a: Tensor, idx) -> Tensor:
    """Gather one entry along the last axis per leading index."""
    idx = np.asarray(idx, dtype=np.int64)
    _check("pick", idx.shape == a.shape[:-1], a.shape, idx.shape)
    x = a.data
    out = np.take_along_axis(x, idx[..., None], axis=-1)[..., 0]

    def back(g):
        gx = np.zeros_like(x)
        np.put_along_axis(gx, idx[..., None], g[..., None], axis=-1)
        return (gx,)

    return _make(out, (a,), back, "pick")


def cross_entropy(probs: Tensor, target) -> Tensor:
    """Elementwise -log p[target] for distributions along the last axis."""
    target = np.asarray(target, dtype=np.int64)
    _check("cross_entropy", target.shape == probs.shape[:-1], probs.shape, target.shape)
    p = np.take_along_axis(probs.data, target[..., None], axis=-1)[..., 0]
    p = np.maximum(p, 1e-300)

    def back(g):
        gp = np.zeros_like(probs.data)
        np.put_along_axis(gp, target[..., None], (-g / p)[..., None], axis=-1)
        return (gp,)

    return _make(-np.log(p), (probs,), back, "cross_entropy")


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    x = a.data
    out = x.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make(out, (a,), back, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return scale(tsum(a, axis, keepdims), 1.0 / n)


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {old} as {tuple(shape)}") from None
    return _make(out, (a,), lambda g: (g.reshape(old),), "reshape")


def transpose(a: Tensor, axes=None) -> Tensor:
    axes = tuple(range(a.ndim))[::-1] if axes is None else tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),), "transpose")


def take(a: Tensor, key) -> Tensor:
    x = a.data

    def back(g):
        gx = np.zeros_like(x)
        np.add.at(gx, key, g)
        return (gx,)

    return _make(x[key], (a,), back, "take")


def expand(a: Tensor, axis: int, n: int) -> Tensor:
    """Insert ``axis`` and repeat ``n`` times (explicit broadcast)."""
    x = np.expand_dims(a.data, axis)
    out = np.repeat(x, n, axis=axis)
    return _make(out, (a,), lambda g: (g.sum(axis=axis),), "expand")


def square(a: Tensor) -> Tensor:
    return mul(a, a)

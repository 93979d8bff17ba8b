"""A small reverse-mode gradient engine over complex numpy arrays.

Scalars here are complex, losses are real. For a complex quantity z = x + iy
the stored adjoint is dL/dx + i dL/dy. With the pairing <a, b> = Re(conj(a) b)
the chain rule keeps its usual shape, and the adjoint of a C-linear map with
matrix A is multiplication by conj(A) transposed; conjugation contributes a
conjugated adjoint. Real-valued tensors (activation thresholds, extracted
real parts) carry plain real adjoints. No Wirtinger bookkeeping anywhere:
every backward rule below is derived directly from the pairing.

Composite layers register their own fused backward rules through `custom`,
so the op set here stays generic: arithmetic, conjugation, reductions,
slicing and concatenation.
"""

from __future__ import annotations

import contextlib

import numpy as np

_GRAD_ENABLED = True


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
    """A numpy array plus the graph edge that produced it."""

    __slots__ = ("val", "grad", "requires_grad", "_parents", "_bwd")

    def __init__(self, val, requires_grad=False, parents=(), bwd=None, grad=None):
        self.val = np.asarray(val)
        self.requires_grad = requires_grad
        self._parents = parents
        self._bwd = bwd
        self.grad = grad

    @property
    def shape(self):
        return self.val.shape

    def accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros(self.val.shape, dtype=self.val.dtype)
        if np.iscomplexobj(self.grad) or not np.iscomplexobj(g):
            self.grad += g
        else:
            self.grad += g.real

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, neg(other))

    def __neg__(self):
        return neg(self)

    def __mul__(self, other):
        return mul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.val.shape}, dtype={self.val.dtype}, grad={self.requires_grad})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def custom(val, parents, bwd) -> Tensor:
    """Build a graph node with a hand-written backward rule.

    `bwd(out_grad)` must push adjoint contributions into the parents via
    their `accumulate`. The node is created detached when gradients are
    globally off or no parent needs them.
    """
    parents = tuple(p for p in parents if isinstance(p, Tensor))
    if _GRAD_ENABLED and any(p.requires_grad or p._parents for p in parents):
        return Tensor(val, parents=parents, bwd=bwd)
    return Tensor(val)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum gradient over axes that broadcasting expanded."""
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    val = a.val + b.val

    def bwd(g):
        a.accumulate(_unbroadcast(g, a.val.shape))
        b.accumulate(_unbroadcast(g, b.val.shape))

    return custom(val, (a, b), bwd)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return custom(-a.val, (a,), lambda g: a.accumulate(-g))


def mul(a, b) -> Tensor:
    """Elementwise product with broadcasting; u gets g conj(v) and vice versa."""
    a, b = as_tensor(a), as_tensor(b)
    val = a.val * b.val

    def bwd(g):
        a.accumulate(_unbroadcast(g * np.conj(b.val), a.val.shape))
        b.accumulate(_unbroadcast(g * np.conj(a.val), b.val.shape))

    return custom(val, (a, b), bwd)


def scale(a, c) -> Tensor:
    """Product with a constant (kept out of the graph)."""
    a = as_tensor(a)
    c = np.asarray(c)
    return custom(a.val * c, (a,), lambda g: a.accumulate(_unbroadcast(g * np.conj(c), a.val.shape)))


def conj(a) -> Tensor:
    a = as_tensor(a)
    return custom(np.conj(a.val), (a,), lambda g: a.accumulate(np.conj(g)))


def real_part(a) -> Tensor:
    a = as_tensor(a)
    return custom(a.val.real.copy(), (a,), lambda g: a.accumulate(g.astype(a.val.dtype)))


def abs2(a) -> Tensor:
    """Squared modulus, a real tensor; adjoint of z is 2 g z."""
    a = as_tensor(a)
    val = (a.val * np.conj(a.val)).real
    return custom(val, (a,), lambda g: a.accumulate(2.0 * g * a.val))


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    val = a.val.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is None:
            a.accumulate(np.broadcast_to(g, a.val.shape).copy())
            return
        if not keepdims:
            g = np.expand_dims(g, axis)
        a.accumulate(np.broadcast_to(g, a.val.shape).copy())

    return custom(val, (a,), bwd)


def tmean(a, axis, keepdims=False) -> Tensor:
    a = as_tensor(a)
    n = a.val.shape[axis]
    return scale(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)
    val = a.val[idx]

    def bwd(g):
        if np.iscomplexobj(g) and not np.iscomplexobj(a.val):
            g = g.real
        buf = np.zeros(a.val.shape, dtype=g.dtype)
        np.add.at(buf, idx, g)
        a.accumulate(buf)

    return custom(val, (a,), bwd)


def add_n(tensors) -> Tensor:
    """Sum of several tensors without a chain of intermediates."""
    tensors = [as_tensor(t) for t in tensors]
    val = tensors[0].val
    for t in tensors[1:]:
        val = val + t.val

    def bwd(g):
        for t in tensors:
            t.accumulate(_unbroadcast(g, t.val.shape))

    return custom(val, tuple(tensors), bwd)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return custom(a.val.reshape(shape), (a,),
                  lambda g: a.accumulate(g.reshape(a.val.shape)))


def expand_dims(a, axis) -> Tensor:
    a = as_tensor(a)
    return custom(np.expand_dims(a.val, axis), (a,),
                  lambda g: a.accumulate(np.squeeze(g, axis=axis)))


def transpose_last2(a) -> Tensor:
    a = as_tensor(a)
    return custom(a.val.swapaxes(-1, -2), (a,),
                  lambda g: a.accumulate(g.swapaxes(-1, -2)))


def diag_part(a) -> Tensor:
    """Diagonal of the last two axes, (..., m, m) -> (..., m)."""
    a = as_tensor(a)
    m = a.val.shape[-1]
    idx = np.arange(m)

    def bwd(g):
        buf = np.zeros(a.val.shape, dtype=g.dtype)
        buf[..., idx, idx] = g
        a.accumulate(buf)

    return custom(a.val[..., idx, idx].copy(), (a,), bwd)


def diag_embed(a) -> Tensor:
    """Embed the last axis as a diagonal, (..., m) -> (..., m, m)."""
    a = as_tensor(a)
    m = a.val.shape[-1]
    idx = np.arange(m)
    val = np.zeros(a.val.shape + (m,), dtype=a.val.dtype)
    val[..., idx, idx] = a.val
    return custom(val, (a,), lambda g: a.accumulate(g[..., idx, idx].copy()))


def _cmap_fwd(coef: np.ndarray, x: np.ndarray) -> np.ndarray:
    out = np.tensordot(coef, x, axes=([1], [1]))  # (O, B, rest)
    return np.moveaxis(out, 0, 1)


def channel_map(coef, x) -> Tensor:
    """Mix channels: out[b, o, ...] = sum_i coef[o, i] x[b, i, ...].

    C-bilinear in both arguments, so each adjoint is the other argument
    conjugated and contracted against the output gradient.
    """
    coef, x = as_tensor(coef), as_tensor(x)
    val = _cmap_fwd(coef.val, x.val)

    def bwd(g):
        rest = tuple(range(2, g.ndim))
        coef.accumulate(np.tensordot(g, np.conj(x.val), axes=([0, *rest], [0, *rest])))
        x.accumulate(np.moveaxis(np.tensordot(np.conj(coef.val), g, axes=([0], [1])), 0, 1))

    return custom(val, (coef, x), bwd)


def concat(tensors, axis) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    val = np.concatenate([t.val for t in tensors], axis=axis)
    sizes = [t.val.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            t.accumulate(g[tuple(sl)])

    return custom(val, tuple(tensors), bwd)


def backward(root: Tensor, seed=None):
    """Reverse-topological sweep from a (real, scalar) loss node."""
    if seed is None:
        if root.val.shape != ():
            raise ValueError("backward needs a scalar root (or an explicit seed)")
        seed = np.asarray(1.0, dtype=root.val.dtype)
    topo, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if id(node) in seen:
            continue
        if expanded:
            seen.add(id(node))
            topo.append(node)
            continue
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    root.accumulate(np.asarray(seed))
    for node in reversed(topo):
        if node._bwd is not None and node.grad is not None:
            node._bwd(node.grad)
        if node._parents and node is not root:
            node.grad = None  # interior buffers are single-use

"""Minimal reverse-mode autodiff on numpy arrays.

A tiny tape: every op builds a `Var` holding a value and closures that push
cotangents to its parents.  `backward(loss)` runs the reverse sweep in
topological order.  Only what the training objective needs is implemented,
plus two custom ops with hand-derived adjoints:

- `procrustes`: nearest-rotation projection, adjoint via the special SVD
  (dM = U H V^T with H_ij = (G~_ij - G~_ji)/(d_i + d_j), G~ = U^T G V).
- `fisher_log_prob`: log density of a matrix Fisher evaluated at a fixed
  rotation, adjoint dF = R_gt - E[R] with E[R] from the normalizer.

Shapes broadcast like numpy; gradients are un-broadcast by summing the
expanded axes.  `no_grad()` turns the tape off (used by pure inference).
"""

from __future__ import annotations

import contextlib

import numpy as np

from .distributions import FisherNormalizer
from .errors import DimensionMismatch
from .so3 import procrustes_matrices, special_svd, special_procrustes_vjp

__all__ = [
    "Var",
    "var",
    "backward",
    "no_grad",
    "add", "sub", "mul", "div", "neg", "matmul", "transpose_last2",
    "reshape", "concat", "stack", "take", "relu", "abs_", "exp", "log",
    "sigmoid", "softplus", "sqrt", "square", "clip_min", "maximum",
    "sum_", "mean_", "procrustes", "fisher_log_prob",
]

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the context."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Var:
    """A node in the tape: numpy value + backward closures to parents."""

    __slots__ = ("value", "grad", "_parents", "_vjps")

    def __init__(self, value, parents=(), vjps=()):
        self.value = np.asarray(value, dtype=float)
        self.grad = None
        self._parents = parents if _grad_enabled else ()
        self._vjps = vjps if _grad_enabled else ()

    @property
    def shape(self):
        return self.value.shape

    # operator sugar
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

    def __getitem__(self, idx):
        return take(self, idx)


def var(value) -> Var:
    """Leaf variable (gradients accumulate here)."""
    return Var(value)


def _value(x) -> np.ndarray:
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=float)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum gradient over axes that numpy broadcasting expanded."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _make(value, pairs) -> Var:
    """Build a Var from (parent, vjp) pairs, dropping constant parents."""
    parents, vjps = [], []
    for p, fn in pairs:
        if isinstance(p, Var):
            parents.append(p)
            vjps.append(fn)
    return Var(value, tuple(parents), tuple(vjps))


def backward(out: Var, seed=None) -> None:
    """Reverse sweep from `out`; accumulates into `.grad` on every Var."""
    if seed is None:
        if out.value.ndim != 0:
            raise DimensionMismatch("backward() without seed needs a scalar output")
        seed = np.ones(())
    order: list[Var] = []
    seen = set()
    stack = [(out, False)]
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
            if id(p) not in seen:
                stack.append((p, False))
    out.grad = np.asarray(seed, dtype=float)
    for node in reversed(order):
        if node.grad is None:
            continue
        for parent, vjp in zip(node._parents, node._vjps):
            g = vjp(node.grad)
            if parent.grad is None:
                parent.grad = g.copy()
            else:
                parent.grad = parent.grad + g


# elementwise arithmetic -----------------------------------------------------


def add(a, b) -> Var:
    av, bv = _value(a), _value(b)
    return _make(av + bv, [(a, lambda g: _unbroadcast(g, av.shape)),
                           (b, lambda g: _unbroadcast(g, bv.shape))])


def sub(a, b) -> Var:
    av, bv = _value(a), _value(b)
    return _make(av - bv, [(a, lambda g: _unbroadcast(g, av.shape)),
                           (b, lambda g: _unbroadcast(-g, bv.shape))])


def mul(a, b) -> Var:
    av, bv = _value(a), _value(b)
    return _make(av * bv, [(a, lambda g: _unbroadcast(g * bv, av.shape)),
                           (b, lambda g: _unbroadcast(g * av, bv.shape))])


def div(a, b) -> Var:
    av, bv = _value(a), _value(b)
    return _make(av / bv, [(a, lambda g: _unbroadcast(g / bv, av.shape)),
                           (b, lambda g: _unbroadcast(-g * av / bv**2, bv.shape))])


def neg(a) -> Var:
    av = _value(a)
    return _make(-av, [(a, lambda g: -g)])


def matmul(a, b) -> Var:
    av, bv = _value(a), _value(b)
    out = av @ bv

    def da(g):
        return _unbroadcast(g @ np.swapaxes(bv, -1, -2), av.shape)

    def db(g):
        return _unbroadcast(np.swapaxes(av, -1, -2) @ g, bv.shape)

    return _make(out, [(a, da), (b, db)])


def transpose_last2(a) -> Var:
    av = _value(a)
    return _make(np.swapaxes(av, -1, -2),
                 [(a, lambda g: np.swapaxes(g, -1, -2))])


def reshape(a, shape) -> Var:
    av = _value(a)
    return _make(av.reshape(shape), [(a, lambda g: g.reshape(av.shape))])


def concat(parts, axis=0) -> Var:
    vals = [_value(p) for p in parts]
    out = np.concatenate(vals, axis=axis)
    sizes = [v.shape[axis] for v in vals]
    splits = np.cumsum(sizes)[:-1]
    pairs = []
    for i, p in enumerate(parts):
        def make_vjp(i=i):
            return lambda g: np.split(g, splits, axis=axis)[i]
        pairs.append((p, make_vjp()))
    return _make(out, pairs)


def stack(parts, axis=0) -> Var:
    vals = [_value(p) for p in parts]
    out = np.stack(vals, axis=axis)
    pairs = []
    for i, p in enumerate(parts):
        def make_vjp(i=i):
            return lambda g: np.take(g, i, axis=axis)
        pairs.append((p, make_vjp()))
    return _make(out, pairs)


def take(a, idx) -> Var:
    """Static indexing/slicing; gradient scatters back into zeros."""
    av = _value(a)
    out = av[idx]

    def da(g):
        full = np.zeros_like(av)
        np.add.at(full, idx, g)
        return full

    return _make(out, [(a, da)])


# elementwise nonlinearities --------------------------------------------------


def relu(a) -> Var:
    av = _value(a)
    mask = av > 0
    return _make(np.where(mask, av, 0.0), [(a, lambda g: g * mask)])


def abs_(a) -> Var:
    av = _value(a)
    sign = np.sign(av)
    return _make(np.abs(av), [(a, lambda g: g * sign)])


def exp(a) -> Var:
    out = np.exp(_value(a))
    return _make(out, [(a, lambda g: g * out)])


def log(a) -> Var:
    av = _value(a)
    return _make(np.log(av), [(a, lambda g: g / av)])


def sigmoid(a) -> Var:
    out = 1.0 / (1.0 + np.exp(-_value(a)))
    return _make(out, [(a, lambda g: g * out * (1.0 - out))])


def softplus(a) -> Var:
    av = _value(a)
    out = np.logaddexp(0.0, av)
    sig = 1.0 / (1.0 + np.exp(-av))
    return _make(out, [(a, lambda g: g * sig)])


def sqrt(a) -> Var:
    out = np.sqrt(_value(a))
    return _make(out, [(a, lambda g: g * 0.5 / out)])


def square(a) -> Var:
    av = _value(a)
    return _make(av * av, [(a, lambda g: g * 2.0 * av)])


def clip_min(a, lo: float) -> Var:
    """max(a, lo); subgradient passes where a > lo."""
    av = _value(a)
    mask = av > lo
    return _make(np.where(mask, av, lo), [(a, lambda g: g * mask)])


def maximum(a, b) -> Var:
    av, bv = _value(a), _value(b)
    mask = av >= bv
    return _make(np.where(mask, av, bv),
                 [(a, lambda g: _unbroadcast(g * mask, av.shape)),
                  (b, lambda g: _unbroadcast(g * (~mask), bv.shape))])


# reductions ------------------------------------------------------------------


def sum_(a, axis=None) -> Var:
    av = _value(a)
    out = av.sum(axis=axis)

    def da(g):
        if axis is None:
            return np.broadcast_to(g, av.shape).copy()
        return np.broadcast_to(np.expand_dims(g, axis), av.shape).copy()

    return _make(out, [(a, da)])


def mean_(a, axis=None) -> Var:
    av = _value(a)
    n = av.size if axis is None else av.shape[axis]
    return mul(sum_(a, axis=axis), 1.0 / n)


# custom ops ------------------------------------------------------------------


def procrustes(m) -> Var:
    """Nearest rotations to (..., 3, 3) matrices, identity on degenerate input.

    Degenerate entries (where the projection is non-unique and the forward
    pass falls back to the identity) receive a zero gradient.
    """
    mv = _value(m)
    u, d, v = special_svd(mv)
    r = procrustes_matrices(mv, on_degenerate="identity")
    bad = d[..., 1] + d[..., 2] <= 1e-12 * np.maximum(d[..., 0], 1.0)

    def dm(g):
        if np.any(bad):
            g = np.where(bad[..., None, None], 0.0, g)
            dd = np.where(bad[..., None], 1.0, d)
            return np.where(bad[..., None, None], 0.0,
                            special_procrustes_vjp(u, dd, v, g))
        return special_procrustes_vjp(u, d, v, g)

    return _make(r, [(m, dm)])


def fisher_log_prob(f, r_gt, normalizer: FisherNormalizer) -> Var:
    """ln density of matrix Fisher(F) at rotations r_gt, shape (...,).

    Gradient with respect to F is r_gt - E[R] (expected rotation under F).
    """
    fv = _value(f)
    rv = np.asarray(r_gt, dtype=float)
    if fv.shape != rv.shape or fv.shape[-2:] != (3, 3):
        raise DimensionMismatch(
            f"parameter/rotation shapes must match as (...,3,3), got {fv.shape} vs {rv.shape}")
    log_c, mean_r = normalizer.log_c_batch(fv)
    trace = np.einsum("...ij,...ij->...", fv, rv)
    out = log_c + trace

    def df(g):
        return g[..., None, None] * (rv - mean_r)

    return _make(out, [(f, df)])

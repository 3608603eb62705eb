"""Reverse-mode autodiff over dense float64 numpy arrays.

Ops executed under an active ``Tape`` record themselves in execution
order; ``Tape.backward`` replays the records in reverse, accumulating
adjoints. Outside a tape the same ops are plain numpy forward math
(used for sampling and diagnostics).

Conventions fixed here:
  * everything is float64;
  * the nonlinearity is tanh;
  * clamp has a hard (saturating) adjoint: 1 strictly inside the
    bounds, 0 at and outside them;
  * cosine similarity of a vector with norm <= 1e-12 is 0 with zero
    gradient.
"""

from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError

_STATE = threading.local()


def _active_tape():
    return getattr(_STATE, "tape", None)


class Var:
    """A value in the computation graph; wraps a float64 ndarray."""

    __slots__ = ("value", "grad", "_parents", "_backward")

    def __init__(self, value, _parents=(), _backward=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def size(self):
        return self.value.size

    def item(self) -> float:
        return float(self.value)

    def __repr__(self):
        return f"Var(shape={self.value.shape})"

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

    def __pow__(self, p):
        if p == 2:
            return square(self)
        return pow_scalar(self, p)


class Tape:
    """Ordered record of executed primitives.

    Use as a context manager around one training step; one tape per
    thread at a time.
    """

    def __init__(self):
        self._records: list[Var] = []

    def __enter__(self):
        if _active_tape() is not None:
            raise ContractError("a tape is already active on this thread")
        _STATE.tape = self
        return self

    def __exit__(self, exc_type, exc, tb):
        _STATE.tape = None
        return False

    def backward(self, loss: Var) -> float:
        """Seed the scalar ``loss`` and replay adjoints in reverse order."""
        if not isinstance(loss, Var):
            raise ContractError("loss must be a Var")
        if loss.value.size != 1:
            raise ContractError(f"loss must be scalar, got shape {loss.value.shape}")
        loss.grad = np.ones_like(loss.value)
        for var in reversed(self._records):
            if var.grad is None or var._backward is None:
                continue
            contributions = var._backward(var.grad)
            for parent, g in zip(var._parents, contributions):
                if g is None:
                    continue
                if parent.grad is None:
                    parent.grad = np.asarray(g, dtype=np.float64).reshape(parent.value.shape).copy()
                else:
                    parent.grad += np.asarray(g, dtype=np.float64).reshape(parent.value.shape)
        return float(loss.value)


def _lift(x) -> Var:
    return x if isinstance(x, Var) else Var(x)


def _make(value, parents, backward: Callable) -> Var:
    """Create a result Var; record it only when a tape is active."""
    tape = _active_tape()
    if tape is None:
        return Var(value)
    out = Var(value, parents, backward)
    tape._records.append(out)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Var:
    a, b = _lift(a), _lift(b)
    out = a.value + b.value
    return _make(out, (a, b), lambda g: (_unbroadcast(g, a.value.shape), _unbroadcast(g, b.value.shape)))


def sub(a, b) -> Var:
    a, b = _lift(a), _lift(b)
    out = a.value - b.value
    return _make(out, (a, b), lambda g: (_unbroadcast(g, a.value.shape), _unbroadcast(-g, b.value.shape)))


def mul(a, b) -> Var:
    a, b = _lift(a), _lift(b)
    out = a.value * b.value
    return _make(
        out,
        (a, b),
        lambda g: (_unbroadcast(g * b.value, a.value.shape), _unbroadcast(g * a.value, b.value.shape)),
    )


def div(a, b) -> Var:
    a, b = _lift(a), _lift(b)
    out = a.value / b.value
    return _make(
        out,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.value, a.value.shape),
            _unbroadcast(-g * a.value / (b.value * b.value), b.value.shape),
        ),
    )


def neg(a) -> Var:
    a = _lift(a)
    return _make(-a.value, (a,), lambda g: (-g,))


def exp(a) -> Var:
    a = _lift(a)
    out = np.exp(a.value)
    return _make(out, (a,), lambda g: (g * out,))


def log(a) -> Var:
    a = _lift(a)
    return _make(np.log(a.value), (a,), lambda g: (g / a.value,))


def square(a) -> Var:
    a = _lift(a)
    return _make(a.value * a.value, (a,), lambda g: (g * 2.0 * a.value,))


def sqrt(a) -> Var:
    a = _lift(a)
    out = np.sqrt(a.value)
    return _make(out, (a,), lambda g: (g * 0.5 / out,))


def pow_scalar(a, p: float) -> Var:
    a = _lift(a)
    out = a.value**p
    return _make(out, (a,), lambda g: (g * p * a.value ** (p - 1),))


def tanh(a) -> Var:
    a = _lift(a)
    out = np.tanh(a.value)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),))


# ---------------------------------------------------------------------------
# linear algebra, reductions, structure


def matmul(a, b) -> Var:
    """Matrix product for 1-D/2-D operand combinations."""
    a, b = _lift(a), _lift(b)
    av, bv = a.value, b.value
    out = av @ bv

    def backward(g):
        if av.ndim == 1 and bv.ndim == 2:
            return g @ bv.T, np.outer(av, g)
        if av.ndim == 2 and bv.ndim == 1:
            return np.outer(g, bv), av.T @ g
        if av.ndim == 1 and bv.ndim == 1:
            return g * bv, g * av
        return g @ bv.T, av.T @ g

    return _make(out, (a, b), backward)


def sum(a, axis=None, keepdims: bool = False) -> Var:  # noqa: A001 - mirrors numpy naming
    a = _lift(a)
    out = a.value.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, a.value.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.value.shape).copy(),)

    return _make(out, (a,), backward)


def mean(a, axis=None, keepdims: bool = False) -> Var:
    a = _lift(a)
    out = a.value.mean(axis=axis, keepdims=keepdims)
    count = a.value.size if axis is None else a.value.shape[axis]

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g / count, a.value.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg / count, a.value.shape).copy(),)

    return _make(out, (a,), backward)


def masked_mean(a, mask) -> Var:
    """Mean of rows of ``a`` where ``mask`` is true. a: (N,) or (N, d)."""
    a = _lift(a)
    m = np.asarray(mask, dtype=bool)
    if m.ndim != 1 or m.shape[0] != a.value.shape[0]:
        raise ContractError("mask must be 1-D with one entry per row")
    count = int(m.sum())
    if count == 0:
        raise ContractError("masked_mean over an empty mask")
    w = m.astype(np.float64) / count
    if a.value.ndim == 1:
        out = w @ a.value
        return _make(out, (a,), lambda g: (g * w,))
    out = w @ a.value
    return _make(out, (a,), lambda g: (np.outer(w, g),))


def concat(parts: Sequence, axis: int = 0) -> Var:
    parts = [_lift(p) for p in parts]
    out = np.concatenate([p.value for p in parts], axis=axis)
    sizes = [p.value.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(
            np.take(g, np.arange(offsets[i], offsets[i + 1]), axis=axis) for i in range(len(parts))
        )

    return _make(out, tuple(parts), backward)


def reshape(a, shape) -> Var:
    a = _lift(a)
    out = a.value.reshape(shape)
    return _make(out, (a,), lambda g: (g.reshape(a.value.shape),))


def gather_rows(a, idx) -> Var:
    """Row selection a[idx]; adjoint scatter-adds back."""
    a = _lift(a)
    idx = np.asarray(idx, dtype=np.intp)
    out = a.value[idx]

    def backward(g):
        ga = np.zeros_like(a.value)
        np.add.at(ga, idx, g)
        return (ga,)

    return _make(out, (a,), backward)


def scatter_add_rows(a, idx, num_rows: int) -> Var:
    """out[k] = sum of rows of ``a`` with idx == k; adjoint gathers."""
    a = _lift(a)
    idx = np.asarray(idx, dtype=np.intp)
    out_shape = (num_rows,) + a.value.shape[1:]
    out = np.zeros(out_shape, dtype=np.float64)
    np.add.at(out, idx, a.value)
    return _make(out, (a,), lambda g: (g[idx],))


# ---------------------------------------------------------------------------
# specialized primitives


def softmax(logits) -> Var:
    """Stabilized softmax of a non-empty 1-D vector."""
    x = _lift(logits)
    if x.value.ndim != 1 or x.value.size == 0:
        raise ContractError("softmax expects a non-empty 1-D vector")
    if not np.all(np.isfinite(x.value)):
        raise ContractError("softmax expects finite logits")
    shifted = x.value - x.value.max()
    e = np.exp(shifted)
    out = e / e.sum()
    return _make(out, (x,), lambda g: (out * (g - np.dot(g, out)),))


def clamp(a, lo: float, hi: float) -> Var:
    if lo > hi:
        raise ContractError(f"clamp bounds reversed: lo={lo} > hi={hi}")
    a = _lift(a)
    out = np.clip(a.value, lo, hi)
    interior = (a.value > lo) & (a.value < hi)
    return _make(out, (a,), lambda g: (g * interior,))


def stop_gradient(a) -> Var:
    a = _lift(a)
    return _make(a.value, (a,), lambda g: (None,))


def l2_norm(a) -> Var:
    """Euclidean norm of the flattened array."""
    a = _lift(a)
    n = float(np.sqrt((a.value * a.value).sum()))
    out = np.asarray(n)

    def backward(g):
        if n == 0.0:
            return (np.zeros_like(a.value),)
        return (g * a.value / n,)

    return _make(out, (a,), backward)


def normalize_rows(a, eps: float = 1e-12) -> Var:
    """Rows scaled to unit L2 norm; rows with norm <= eps divide by eps."""
    a = _lift(a)
    v = a.value
    if v.ndim == 1:
        v2 = v[None, :]
        norms = np.sqrt((v2 * v2).sum(axis=1, keepdims=True))
        m = np.maximum(norms, eps)
        out = (v2 / m)[0]

        def backward1(g):
            g2 = g[None, :]
            inside = norms > eps
            gx = g2 / m
            corr = (g2 * v2).sum(axis=1, keepdims=True) * v2 / (m**3)
            return ((gx - np.where(inside, corr, 0.0))[0],)

        return _make(out, (a,), backward1)
    norms = np.sqrt((v * v).sum(axis=1, keepdims=True))
    m = np.maximum(norms, eps)
    out = v / m

    def backward(g):
        inside = norms > eps
        gx = g / m
        corr = (g * v).sum(axis=1, keepdims=True) * v / (m**3)
        return (gx - np.where(inside, corr, 0.0),)

    return _make(out, (a,), backward)


def cosine_similarity(u, v) -> Var:
    """Cosine of two same-length 1-D vectors.

    A vector with norm <= 1e-12 makes the result exactly 0 with zero
    gradient (padded-atom guard), rather than NaN.
    """
    u, v = _lift(u), _lift(v)
    if u.value.ndim != 1 or v.value.ndim != 1 or u.value.shape != v.value.shape:
        raise ContractError("cosine_similarity expects two 1-D vectors of equal length")
    nu = float(np.linalg.norm(u.value))
    nv = float(np.linalg.norm(v.value))
    if nu <= 1e-12 or nv <= 1e-12:
        return _make(np.asarray(0.0), (u, v), lambda g: (None, None))
    dot = float(np.dot(u.value, v.value))
    c = dot / (nu * nv)

    def backward(g):
        gu = g * (v.value / (nu * nv) - c * u.value / (nu * nu))
        gv = g * (u.value / (nu * nv) - c * v.value / (nv * nv))
        return gu, gv

    return _make(np.asarray(c), (u, v), backward)


def onehot_argmax_st(logits) -> Var:
    """Row-wise argmax one-hot forward; identity Jacobian backward.

    Ties break toward the lowest index. The forward value is the exact
    one-hot matrix (not a sum-and-cancel construction).
    """
    x = _lift(logits)
    v = x.value
    if v.ndim != 2:
        raise ContractError("onehot_argmax_st expects an (N, A) logit matrix")
    winners = np.argmax(v, axis=1)
    out = np.zeros_like(v)
    out[np.arange(v.shape[0]), winners] = 1.0
    return _make(out, (x,), lambda g: (g,))


# ---------------------------------------------------------------------------
# whole-expression driver


def value_and_grad(build_loss: Callable[[dict], Var], params) -> float:
    """Evaluate a scalar loss built from ``params`` and write gradients.

    ``build_loss`` receives a dict of leaf Vars (one per parameter) and
    must return a scalar Var. Gradients of trainable parameters are
    accumulated into the store's gradient slots.
    """
    with Tape() as tape:
        bound = params.bind()
        loss = build_loss(bound)
        if not isinstance(loss, Var) or loss.value.size != 1:
            raise ContractError("loss expression must evaluate to a scalar Var")
        value = tape.backward(loss)
    params.absorb(bound)
    return value

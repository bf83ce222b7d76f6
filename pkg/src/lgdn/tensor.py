"""Minimal reverse-mode autodiff on float64 numpy arrays.

The graph is rebuilt on every forward pass (define-by-run): each operation
returns a new :class:`Tensor` holding its inputs and a closure that maps the
output gradient to input gradients.  ``backward`` walks nodes in reverse
construction order exactly once, accumulating gradients additively whenever a
tensor feeds multiple consumers.

All arithmetic is float64.  Softmax and log-sum-exp subtract the row maximum
before exponentiating so that logits scaled by small temperatures stay finite.
Tensors are immutable once they participate in a graph; the optimizer mutates
leaf ``data`` in place between graphs (single-writer contract).
"""

from __future__ import annotations

import itertools
import math
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import NearZeroNorm, NonFiniteLoss, NonFiniteTensor, ShapeMismatch

NORM_EPS = 1e-12

_ids = itertools.count()
_grad_enabled = True


class no_grad:
    """Context manager: ops inside build no graph and track no gradients."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """Dense float64 array plus optional gradient and backward closure."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp", "_nid")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _vjp=None):
        if type(data) is np.ndarray and data.dtype == np.float64:
            arr = data
        else:
            arr = np.asarray(data, dtype=np.float64)
        # a NaN/Inf anywhere makes the sum non-finite; desk-scale magnitudes
        # cannot overflow the reduction
        if not math.isfinite(arr.sum()):
            raise NonFiniteTensor(f"non-finite values in tensor of shape {arr.shape}")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = _parents
        self._vjp: Callable[[np.ndarray], tuple] | None = _vjp
        self._nid = next(_ids)

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def values(self) -> list[float]:
        """Row-major flat copy (serialization view)."""
        return [float(x) for x in self.data.reshape(-1)]

    def __repr__(self) -> str:
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # -- operator sugar ------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    # -- autodiff --------------------------------------------------
    def backward(self) -> None:
        """Populate ``grad`` on every reachable tensor with requires_grad."""
        if self.data.shape != ():
            raise ShapeMismatch("backward() expects a scalar loss")
        if not self.requires_grad:
            return
        nodes: dict[int, Tensor] = {}
        stack = [self]
        while stack:
            t = stack.pop()
            if t._nid in nodes:
                continue
            nodes[t._nid] = t
            stack.extend(t._parents)
        pending: dict[int, np.ndarray] = {self._nid: np.ones(())}
        for t in sorted(nodes.values(), key=lambda n: n._nid, reverse=True):
            g = pending.pop(t._nid, None)
            if g is None:
                continue
            if t.requires_grad:
                t.grad = g.copy() if t.grad is None else t.grad + g
            if t._vjp is None:
                continue
            for parent, pg in zip(t._parents, t._vjp(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if parent._nid in pending:
                    pending[parent._nid] = pending[parent._nid] + pg
                else:
                    pending[parent._nid] = pg

    def zero_grad(self) -> None:
        self.grad = None


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def constant(data) -> Tensor:
    return Tensor(data)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: np.ndarray, parents: tuple[Tensor, ...], vjp) -> Tensor:
    if _grad_enabled and any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _parents=parents, _vjp=vjp)
    return Tensor(data)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcast gradient back to the original operand shape."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- elementwise arithmetic (numpy broadcasting rules apply) -----------

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data + b.data

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _node(out, (a, b), vjp)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data - b.data

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _node(out, (a, b), vjp)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data * b.data

    def vjp(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _node(out, (a, b), vjp)


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data / b.data

    def vjp(g):
        ga = _unbroadcast(g / b.data, a.shape)
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
        return ga, gb

    return _node(out, (a, b), vjp)


def scale(a, c: float) -> Tensor:
    a = _as_tensor(a)
    c = float(c)
    return _node(a.data * c, (a,), lambda g: (g * c,))


def texp(a) -> Tensor:
    a = _as_tensor(a)
    out = np.exp(a.data)
    return _node(out, (a,), lambda g: (g * out,))


def tlog(a) -> Tensor:
    a = _as_tensor(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.data)  # non-positive inputs surface as NonFiniteTensor
    return _node(out, (a,), lambda g: (g / a.data,))


def ttanh(a) -> Tensor:
    a = _as_tensor(a)
    out = np.tanh(a.data)
    return _node(out, (a,), lambda g: (g * (1.0 - out * out),))


def tsqrt(a) -> Tensor:
    a = _as_tensor(a)
    out = np.sqrt(a.data)
    return _node(out, (a,), lambda g: (g / (2.0 * out),))


# -- reductions ------------------------------------------------------

def tsum(a, axis: int | None = None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _node(out, (a,), vjp)


def tmean(a, axis: int | None = None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    out = a.data.mean(axis=axis, keepdims=keepdims)
    n = a.data.size if axis is None else a.shape[axis]

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy() / n,)

    return _node(out, (a,), vjp)


# -- linear algebra --------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim == 0 or b.data.ndim == 0:
        raise ShapeMismatch("matmul needs 1-d or 2-d operands")
    try:
        out = a.data @ b.data
    except ValueError as exc:
        raise ShapeMismatch(f"matmul {a.shape} @ {b.shape}") from exc

    def vjp(g):
        an, bn = a.data.ndim, b.data.ndim
        if an == 2 and bn == 2:
            return g @ b.data.T, a.data.T @ g
        if an == 1 and bn == 2:
            return g @ b.data.T, np.outer(a.data, g)
        if an == 2 and bn == 1:
            return np.outer(g, b.data), a.data.T @ g
        return g * b.data, g * a.data  # 1-d @ 1-d

    return _node(out, (a, b), vjp)


def dot(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 1 or b.data.ndim != 1 or a.shape != b.shape:
        raise ShapeMismatch(f"dot {a.shape} · {b.shape}")
    return matmul(a, b)


def transpose(a) -> Tensor:
    a = _as_tensor(a)
    if a.data.ndim != 2:
        raise ShapeMismatch("transpose expects a matrix")
    return _node(a.data.T.copy(), (a,), lambda g: (g.T,))


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = _as_tensor(a)
    shape = tuple(shape)
    return _node(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


# -- structural ops --------------------------------------------------

def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = tuple(_as_tensor(t) for t in tensors)
    if not ts:
        raise ShapeMismatch("concat of zero tensors")
    out = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return _node(out, ts, vjp)


def stack(vectors: Sequence) -> Tensor:
    """Stack 1-d tensors into a matrix, one row each."""
    ts = tuple(_as_tensor(t) for t in vectors)
    if not ts:
        raise ShapeMismatch("stack of zero tensors")
    if any(t.data.ndim != 1 or t.shape != ts[0].shape for t in ts):
        raise ShapeMismatch("stack expects equal-length vectors")
    out = np.stack([t.data for t in ts])

    def vjp(g):
        return tuple(g[i] for i in range(len(ts)))

    return _node(out, ts, vjp)


def take_row(a, i: int) -> Tensor:
    a = _as_tensor(a)
    if a.data.ndim != 2:
        raise ShapeMismatch("take_row expects a matrix")

    def vjp(g):
        full = np.zeros_like(a.data)
        full[i] = g
        return (full,)

    return _node(a.data[i].copy(), (a,), vjp)


def element(a, i: int) -> Tensor:
    a = _as_tensor(a)
    if a.data.ndim != 1:
        raise ShapeMismatch("element expects a vector")

    def vjp(g):
        full = np.zeros_like(a.data)
        full[i] = g
        return (full,)

    return _node(np.asarray(a.data[i]), (a,), vjp)


def slice_rows(a, start: int, stop: int) -> Tensor:
    a = _as_tensor(a)

    def vjp(g):
        full = np.zeros_like(a.data)
        full[start:stop] = g
        return (full,)

    return _node(a.data[start:stop].copy(), (a,), vjp)


# -- fused compound ops (hot path; exact analytic Jacobians) -----------

def affine(x, w, b) -> Tensor:
    """x @ w + b in one node."""
    x, w, b = _as_tensor(x), _as_tensor(w), _as_tensor(b)
    out = x.data @ w.data + b.data

    def vjp(g):
        if x.data.ndim == 1:
            return g @ w.data.T, np.outer(x.data, g), _unbroadcast(g, b.shape)
        return g @ w.data.T, x.data.T @ g, _unbroadcast(g, b.shape)

    return _node(out, (x, w, b), vjp)


def attention_core(q, k, v, key_bias: np.ndarray, inv_scale: float) -> Tensor:
    """softmax(q @ k.T * inv_scale + key_bias, axis=-1) @ v in one node.

    key_bias is a constant additive mask over keys (0 valid, large negative
    padded); padded keys receive exactly zero weight and zero gradient.
    """
    q, k, v = _as_tensor(q), _as_tensor(k), _as_tensor(v)
    s = q.data @ k.data.T * inv_scale + key_bias
    s = s - s.max(axis=-1, keepdims=True)
    e = np.exp(s)
    attn = e / e.sum(axis=-1, keepdims=True)
    out = attn @ v.data

    def vjp(g):
        gv = attn.T @ g
        ga = g @ v.data.T
        gs = attn * (ga - (ga * attn).sum(axis=-1, keepdims=True))
        return (gs @ k.data) * inv_scale, (gs.T @ q.data) * inv_scale, gv

    return _node(out, (q, k, v), vjp)


# -- stabilized nonlinear reductions ----------------------------------

def softmax(a, axis: int = -1) -> Tensor:
    a = _as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - inner),)

    return _node(out, (a,), vjp)


def logsumexp(a, axis: int | None = None) -> Tensor:
    a = _as_tensor(a)
    m = a.data.max(axis=axis, keepdims=True)
    e = np.exp(a.data - m)
    s = e.sum(axis=axis, keepdims=True)
    out = (m + np.log(s))
    if axis is None:
        out = out.reshape(())
    else:
        out = np.squeeze(out, axis=axis)

    def vjp(g):
        sm = e / s
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (sm * g,)

    return _node(out, (a,), vjp)


# -- normalization -----------------------------------------------------

def layer_norm(x, gain, bias, eps: float = 1e-6) -> Tensor:
    """Row-wise standardization along the last axis, then affine map.

    Fused into one graph node; the backward pass uses the exact Jacobian of
    (x - mean) / sqrt(var + eps) * gain + bias.
    """
    x, gain, bias = _as_tensor(x), _as_tensor(gain), _as_tensor(bias)
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    sigma = np.sqrt(var + eps)
    xhat = centered / sigma
    out = xhat * gain.data + bias.data

    def vjp(g):
        dgain = _unbroadcast(g * xhat, gain.shape)
        dbias = _unbroadcast(g, bias.shape)
        dxhat = g * gain.data
        inner = dxhat - dxhat.mean(axis=-1, keepdims=True) \
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        return inner / sigma, dgain, dbias

    return _node(out, (x, gain, bias), vjp)


def l2_normalize(v) -> Tensor:
    """Scale a vector to unit Euclidean norm.

    Raises NearZeroNorm when the norm is at or below 1e-12; gradients flow
    through the full normalization Jacobian.
    """
    v = _as_tensor(v)
    if v.data.ndim != 1 or v.size < 1:
        raise ShapeMismatch("l2_normalize expects a nonempty vector")
    n = float(np.linalg.norm(v.data))
    if n <= NORM_EPS:
        raise NearZeroNorm(f"norm {n!r} <= {NORM_EPS}")
    out = v.data / n

    def vjp(g):
        return ((g - out * np.dot(out, g)) / n,)

    return _node(out, (v,), vjp)


def cosine(a, b) -> Tensor:
    """Cosine similarity of two vectors as a differentiable scalar."""
    return dot(l2_normalize(a), l2_normalize(b))


# -- verification ----------------------------------------------------

def grad_check(
    f: Callable[[], Tensor],
    params: Iterable[Tensor],
    eps: float = 1e-5,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` must rebuild its forward pass on every call.  The relative error per
    entry is |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError(f"eps {eps} outside [1e-7, 1e-3]")
    params = list(params)
    for p in params:
        p.zero_grad()
    loss = f()
    if loss.data.shape != ():
        raise ShapeMismatch("grad_check target must be scalar")
    if not np.isfinite(loss.data):
        raise NonFiniteLoss("loss is not finite at the given parameters")
    loss.backward()
    analytic = [p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in params]

    worst = 0.0
    with no_grad():
        for p, ga in zip(params, analytic):
            flat = p.data.reshape(-1)
            gflat = ga.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                f_plus = float(f().data)
                flat[i] = orig - eps
                f_minus = float(f().data)
                flat[i] = orig
                numeric = (f_plus - f_minus) / (2.0 * eps)
                a = float(gflat[i])
                rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
                worst = max(worst, rel)
    return worst

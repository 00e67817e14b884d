"""Minimal reverse-mode differentiation over dense numpy arrays.

Only what the scheduler networks need: broadcasting arithmetic, batched
matmul, relu/softplus, reductions, sqrt and concatenation. A node records its
backward closure only when one of its inputs requires a gradient, so target
networks built from plain arrays run without tape overhead.
"""
from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    """Array with an optional gradient slot.

    Parameters
    ----------
    value : array_like
    requires_grad : bool
        Leaf tensors with ``requires_grad`` accumulate into ``grad``.
    """

    __slots__ = ("value", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, value, requires_grad: bool = False, _parents=(), _backward=None):
        self.value = np.asarray(value, dtype=float)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=float, copy=True)
        else:
            self.grad = self.grad + g

    def backward(self, grad=None):
        """Propagate ``grad`` (default ones) to every leaf that requires it."""
        if grad is None:
            grad = np.ones_like(self.value)
        order, seen = [], set()
        stack = [(self, False)]
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
        grads = {id(self): np.asarray(grad, float)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node._accumulate(g)
                continue
            for p, gp in zip(node._parents, node._backward(g)):
                if gp is None or not p.requires_grad:
                    continue
                k = id(p)
                grads[k] = grads[k] + gp if k in grads else gp

    # operator sugar
    def __add__(self, o):
        return add(self, o)

    __radd__ = __add__

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    __rmul__ = __mul__

    def __truediv__(self, o):
        return div(self, o)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, o):
        return matmul(self, o)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(value, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    if any(p.requires_grad for p in parents):
        return Tensor(value, True, tuple(parents), backward)
    return Tensor(value)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    ra, rb = a.requires_grad, b.requires_grad
    return _node(a.value + b.value, (a, b),
                 lambda g: (_unbroadcast(g, sa) if ra else None,
                            _unbroadcast(g, sb) if rb else None))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    ra, rb = a.requires_grad, b.requires_grad
    return _node(a.value - b.value, (a, b),
                 lambda g: (_unbroadcast(g, sa) if ra else None,
                            _unbroadcast(-g, sb) if rb else None))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.value, b.value
    ra, rb = a.requires_grad, b.requires_grad
    return _node(av * bv, (a, b),
                 lambda g: (_unbroadcast(g * bv, av.shape) if ra else None,
                            _unbroadcast(g * av, bv.shape) if rb else None))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.value, b.value
    out = av / bv
    rb = b.requires_grad

    def back(g):
        gb = g / bv
        return (_unbroadcast(gb, av.shape),
                _unbroadcast(-gb * out, bv.shape) if rb else None)
    return _node(out, (a, b), back)


def matmul(a, b) -> Tensor:
    """``a @ b`` with numpy batching rules (``b`` usually a 2-D weight)."""
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.value, b.value

    def back(g):
        ga = g @ np.swapaxes(bv, -1, -2)
        gb = np.swapaxes(av, -1, -2) @ g
        return _unbroadcast(ga, av.shape), _unbroadcast(gb, bv.shape)
    return _node(av @ bv, (a, b), back)


def relu(a) -> Tensor:
    a = as_tensor(a)
    pos = a.value > 0
    return _node(np.where(pos, a.value, 0.0), (a,), lambda g: (g * pos,))


def masked_relu(a, mask) -> Tensor:
    """``relu(a) * mask`` for a constant 0/1 ``mask`` broadcastable to ``a``."""
    a = as_tensor(a)
    keep = (a.value > 0) & (np.asarray(mask) > 0)
    return _node(np.where(keep, a.value, 0.0), (a,), lambda g: (g * keep,))


def masked_softplus(a, mask) -> Tensor:
    """``softplus(a) * mask`` for a constant ``mask``."""
    a = as_tensor(a)
    x = a.value
    m = np.asarray(mask, float)
    sp = np.logaddexp(0.0, x)
    return _node(sp * m, (a,), lambda g: (g * m * np.exp(x - sp),))


def softplus(a) -> Tensor:
    a = as_tensor(a)
    x = a.value
    out = np.logaddexp(0.0, x)
    # sigmoid via exp(x - softplus(x)) stays finite for large |x|
    return _node(out, (a,), lambda g: (g * np.exp(x - out),))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.value)
    return _node(out, (a,), lambda g: (g * 0.5 / out,))


def square(a) -> Tensor:
    a = as_tensor(a)
    x = a.value
    return _node(x * x, (a,), lambda g: (2.0 * g * x,))


def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    shape = a.shape
    out = a.value.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)
    return _node(out, (a,), back)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    n = a.value.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(sum(a, axis, keepdims), 1.0 / n)


def concat(parts: Sequence, axis: int = -1) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    sizes = [p.shape[axis] for p in parts]
    cuts = np.cumsum(sizes)[:-1]
    return _node(np.concatenate([p.value for p in parts], axis=axis), parts,
                 lambda g: tuple(np.split(g, cuts, axis=axis)))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    return _node(a.value.reshape(shape), (a,), lambda g: (g.reshape(old),))


def linear(x, w, b=None) -> Tensor:
    """``x @ w (+ b)`` for a 2-D weight, flattening leading axes of ``x``.

    Same result as :func:`matmul` plus :func:`add`, with the weight gradient
    formed by one 2-D product instead of a batch of them.
    """
    x, w = as_tensor(x), as_tensor(w)
    xv, wv = x.value, w.value
    x2 = xv.reshape(-1, xv.shape[-1])
    out = x2 @ wv
    parents = (x, w)
    if b is not None:
        b = as_tensor(b)
        out = out + b.value
        parents = (x, w, b)
    out = out.reshape(xv.shape[:-1] + (wv.shape[1],))

    def back(g):
        g2 = g.reshape(-1, g.shape[-1])
        gx = (g2 @ wv.T).reshape(xv.shape) if x.requires_grad else None
        gw = x2.T @ g2 if w.requires_grad else None
        if b is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0).reshape(b.shape)
    return _node(out, parents, back)


def set_layer(x, lam, gam, mask, relu: bool = True) -> Tensor:
    """Permutation-equivariant layer over axis 1 of ``x (B, K, H)``.

    ``y = x Lambda + (sum_k x_k) Gamma``, then ``relu`` (optional) and the
    constant user mask ``(B, K, 1)``.
    """
    x, lam, gam = as_tensor(x), as_tensor(lam), as_tensor(gam)
    xv, lv, gv = x.value, lam.value, gam.value
    B, K, H = xv.shape
    pooled = xv.sum(axis=1)
    y = (xv.reshape(-1, H) @ lv).reshape(B, K, -1) + (pooled @ gv)[:, None, :]
    m = np.asarray(mask, float)
    keep = (y > 0) * m if relu else np.broadcast_to(m, y.shape)
    out = y * keep

    def back(g):
        gy = g * keep
        gsum = gy.sum(axis=1)
        gx = None
        if x.requires_grad:
            gx = (gy.reshape(-1, gy.shape[-1]) @ lv.T).reshape(xv.shape) + (gsum @ gv.T)[:, None, :]
        gl = xv.reshape(-1, H).T @ gy.reshape(-1, gy.shape[-1]) if lam.requires_grad else None
        gg = pooled.T @ gsum if gam.requires_grad else None
        return gx, gl, gg
    return _node(out, (x, lam, gam), back)


def center_normalize(x, mask, eps: float) -> Tensor:
    """Rows of ``x (B, K)`` centered over ``mask`` and scaled to unit norm.

    ``z = P x / sqrt(|P x|^2 + eps^2)`` where ``P`` subtracts the mean over the
    active entries and zeroes the inactive ones (``P`` is symmetric).
    """
    x = as_tensor(x)
    m = np.asarray(mask, float)
    n = np.maximum(m.sum(axis=1, keepdims=True), 1.0)

    def proj(v):
        return (v - (v * m).sum(axis=1, keepdims=True) / n) * m

    xc = proj(x.value)
    nrm = np.sqrt((xc * xc).sum(axis=1, keepdims=True) + eps * eps)
    z = xc / nrm

    def back(g):
        gxc = g / nrm - xc * ((xc * g).sum(axis=1, keepdims=True) / nrm ** 3)
        return (proj(gxc),)
    return _node(z, (x,), back)


def pinball(pred, target, taus) -> Tensor:
    """Per-sample quantile loss ``sum_i mean_j f_i(target_j - pred_i)``.

    ``pred`` is ``(B, N)`` (gradient flows), ``target`` is a constant
    ``(B, M)`` and ``f_i(u) = u (tau_i - 1{u < 0})``. Returns shape ``(B,)``.

    Uses ``mean_j f_i = tau_i (mean(t) - p_i) - sum_{t_j < p_i} (t_j - p_i) / M``
    with the counts and partial sums read off one joint sort per row, so the
    cost is ``O((N + M) log(N + M))`` rather than ``O(N M)``.
    """
    pred = as_tensor(pred)
    p = pred.value
    t = np.asarray(target.value if isinstance(target, Tensor) else target, float)
    B, N = p.shape
    M = t.shape[1]
    taus = np.asarray(taus, float)
    # predictions first: a target equal to p_i sorts after it and is not counted
    joint = np.concatenate([p, t], axis=1)
    order = np.argsort(joint, axis=1, kind="stable")
    vals = np.take_along_axis(joint, order, axis=1)
    is_t = order >= N
    cnt = np.cumsum(is_t, axis=1)
    csum = np.cumsum(np.where(is_t, vals, 0.0), axis=1)
    pos = np.empty_like(order)
    np.put_along_axis(pos, order, np.arange(N + M)[None, :].repeat(B, 0), axis=1)
    pp = pos[:, :N]
    c = np.take_along_axis(cnt, pp, axis=1)
    s = np.take_along_axis(csum, pp, axis=1)
    tbar = t.mean(axis=1, keepdims=True)
    per_atom = taus * (tbar - p) - (s - c * p) / M
    out = per_atom.sum(axis=1)
    # d/dp_i = -tau_i + #{t_j < p_i} / M
    dpred = c / M - taus
    return _node(out, (pred,), lambda g: (g[:, None] * dpred,))

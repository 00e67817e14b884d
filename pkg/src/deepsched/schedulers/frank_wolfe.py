"""Statistical-CSI benchmark: Frank-Wolfe on the expected-gain tree.

For every user position we build a tree over the next ``T`` slots: the
current user (distance known, channel unknown) followed by future users whose
class and position are random. The objective is the expected importance
weighted number of satisfied users, as a function of the ``K x T`` bandwidth
plan. Only its first column is applied (receding horizon).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .. import analytics
from ..env import ChannelParams, ServiceClass
from ..exceptions import UnsupportedModeError

DESIGNS = ("iid", "constant")


@dataclass
class GainTree:
    """``K`` parallel user trees over a horizon of ``T`` slots.

    Parameters
    ----------
    importance, data_size, distance : (K,) arrays
        Attributes of the user currently at each position.
    remaining_life : (K,) int array
        Slots left for the current user, counting the current one.
    active : (K,) bool array
        False for null-class or already satisfied users.
    hist_max : (K,) array
        Largest bandwidth the current user received in a past slot (used by
        the constant-channel design).
    classes : sequence of ServiceClass
        Class table including the null class.
    design : {'iid', 'constant'}
        Channel model the objective is built for.
    """

    horizon: int
    importance: np.ndarray
    data_size: np.ndarray
    distance: np.ndarray
    remaining_life: np.ndarray
    active: np.ndarray
    hist_max: np.ndarray
    classes: Sequence[ServiceClass]
    channel: ChannelParams
    design: str = "iid"
    _renewal: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.design not in DESIGNS:
            raise UnsupportedModeError(
                f"no closed-form objective for design {self.design!r}; use 'iid' or 'constant'")
        for name in ("importance", "data_size", "distance", "hist_max"):
            setattr(self, name, np.asarray(getattr(self, name), float))
        self.remaining_life = np.asarray(self.remaining_life, int)
        self.active = np.asarray(self.active, bool)
        self._renewal = renewal_probabilities(self.remaining_life, self.classes, self.horizon)

    @property
    def K(self) -> int:
        return len(self.importance)


def renewal_probabilities(remaining_life, classes, horizon):
    """``q[k, s]``: probability that a new user arrives at position ``k`` at slot ``s``."""
    remaining_life = np.asarray(remaining_life, int)
    K = len(remaining_life)
    q = np.zeros((K, horizon))
    for k in range(K):
        if remaining_life[k] < horizon:
            q[k, remaining_life[k]] = 1.0
        for s in range(remaining_life[k] + 1, horizon):
            q[k, s] = sum(c.arrival_prob * q[k, s - c.latency]
                          for c in classes if s - c.latency >= remaining_life[k])
    return q


def _segment_gain(P, dP, mask_cols, design, denom=None):
    """Gain factor ``1 - prod(Phi)`` over the masked columns and its gradient.

    ``P``/``dP`` are (K, T) failure probabilities and their derivatives at the
    current plan; ``mask_cols`` is a (K, T) bool array selecting each row's
    segment. Returns ``(gain (K,), grad (K, T))`` without the importance.
    """
    K, T = P.shape
    grad = np.zeros((K, T))
    if design == "iid":
        Pm = np.where(mask_cols, P, 1.0)
        prod = np.prod(Pm, axis=1)
        for t in range(T):
            others = np.prod(np.delete(Pm, t, axis=1), axis=1) if T > 1 else np.ones(K)
            grad[:, t] = np.where(mask_cols[:, t], -others * dP[:, t], 0.0)
        return 1.0 - prod, grad
    raise AssertionError("constant design handled by caller")


def _evaluate(tree: GainTree, Wm: np.ndarray, with_grad: bool = True):
    Wm = np.asarray(Wm, float)
    K, T = Wm.shape
    ch = tree.channel
    kw = ch.outage_kwargs()
    cols = np.arange(T)[None, :]
    total = 0.0
    grad = np.zeros((K, T))

    # current users, distance known
    seg = (cols < tree.remaining_life[:, None]) & tree.active[:, None]
    D = tree.data_size[:, None]
    d = tree.distance[:, None]
    alpha = tree.importance
    if tree.design == "iid":
        P = analytics.pfail_given_d_value(Wm, D, d, **kw)
        dP = analytics.dpfail_given_d_dw_value(Wm, D, d, **kw) if with_grad else np.zeros_like(P)
        g, gg = _segment_gain(P, dP, seg, "iid")
        total += float(np.sum(alpha * g))
        grad += alpha[:, None] * gg
    else:
        masked = np.where(seg, Wm, -np.inf)
        arg = np.argmax(masked, axis=1)
        seg_max = np.where(seg.any(axis=1), masked[np.arange(K), arg], 0.0)
        m = np.maximum(seg_max, tree.hist_max)
        Dk, dk = tree.data_size, tree.distance
        num = analytics.pfail_given_d_value(m, Dk, dk, **kw)
        den = analytics.pfail_given_d_value(tree.hist_max, Dk, dk, **kw)
        ratio = np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)
        g = np.where(seg.any(axis=1), 1.0 - ratio, 0.0)
        total += float(np.sum(alpha * g))
        if with_grad:
            dnum = analytics.dpfail_given_d_dw_value(m, Dk, dk, **kw)
            moves = seg.any(axis=1) & (seg_max > tree.hist_max) & (den > 0)
            gk = np.where(moves, -alpha * dnum / np.where(den > 0, den, 1.0), 0.0)
            grad[np.arange(K), arg] += gk

    # future users, position averaged; one batched call for all classes
    q = tree._renewal
    live = [c for c in tree.classes if c.importance > 0 and c.arrival_prob > 0]
    if T < 2 or not live or not np.any(q[:, 1:] > 0):
        return total, grad
    Dc = np.array([c.data_size for c in live])[:, None, None]
    Wf = np.broadcast_to(Wm[None, :, 1:], (len(live), K, T - 1))
    P_all = analytics.pfail_avg_value(Wf, Dc, d_min=ch.d_min, d_max=ch.d_max, **kw)
    dP_all = (analytics.dpfail_avg_dw_value(Wf, Dc, d_min=ch.d_min, d_max=ch.d_max, **kw)
              if with_grad else None)
    rows = np.arange(K)
    for ci, c in enumerate(live):
        # column j of P corresponds to slot j + 1
        P = P_all[ci]
        dP = dP_all[ci] if with_grad else None
        for s in range(1, T):
            weight = q[:, s] * c.arrival_prob * c.importance
            if not np.any(weight > 0):
                continue
            lo, hi = s - 1, min(s + c.latency, T) - 1
            if tree.design == "iid":
                prod = np.prod(P[:, lo:hi], axis=1)
                total += float(np.sum(weight * (1.0 - prod)))
                if with_grad:
                    for t in range(lo, hi):
                        others = np.prod(np.delete(P[:, lo:hi], t - lo, axis=1), axis=1)
                        grad[:, t + 1] -= weight * others * dP[:, t]
            else:
                arg = np.argmax(Wm[:, s:hi + 1], axis=1)
                pm = P[:, lo:hi][rows, arg]
                total += float(np.sum(weight * (1.0 - pm)))
                if with_grad:
                    grad[rows, s + arg] -= weight * dP[:, lo:hi][rows, arg]
    return total, grad


def expected_gain_tree(tree: GainTree, Wm) -> float:
    """Expected importance-weighted number of users satisfied within the horizon."""
    Wm = np.asarray(Wm, float)
    if Wm.shape != (tree.K, tree.horizon):
        raise ValueError(f"plan must be {tree.K}x{tree.horizon}")
    if np.any(Wm < 0):
        raise ValueError("plan entries must be >= 0")
    return _evaluate(tree, Wm, with_grad=False)[0]


def expected_gain_gradient(tree: GainTree, Wm):
    """Objective value and its analytic gradient with respect to the plan."""
    return _evaluate(tree, np.asarray(Wm, float), with_grad=True)


def expected_gain_tree_recursive(tree: GainTree, Wm) -> float:
    """Literal tree recursion (exponential in ``T``); reference implementation."""
    Wm = np.asarray(Wm, float)
    ch = tree.channel
    kw = ch.outage_kwargs()
    T = tree.horizon

    def fail_prod_future(c, w_seg):
        if tree.design == "iid":
            return float(np.prod([analytics.pfail_avg_value(w, c.data_size, d_min=ch.d_min,
                                                            d_max=ch.d_max, **kw) for w in w_seg]))
        return float(analytics.pfail_avg_value(max(w_seg), c.data_size, d_min=ch.d_min,
                                               d_max=ch.d_max, **kw))

    def future(k, s):
        if s >= T:
            return 0.0
        out = 0.0
        for c in tree.classes:
            if c.arrival_prob == 0:
                continue
            end = min(s + c.latency, T)
            g = 0.0
            if c.importance > 0:
                g = c.importance * (1.0 - fail_prod_future(c, Wm[k, s:end]))
            out += c.arrival_prob * (g + future(k, s + c.latency))
        return out

    total = 0.0
    for k in range(tree.K):
        end = min(int(tree.remaining_life[k]), T)
        if tree.active[k] and end > 0:
            D, d = tree.data_size[k], tree.distance[k]
            seg = Wm[k, :end]
            if tree.design == "iid":
                pf = float(np.prod([analytics.pfail_given_d_value(w, D, d, **kw) for w in seg]))
            else:
                m = max(float(seg.max()), tree.hist_max[k])
                den = float(analytics.pfail_given_d_value(tree.hist_max[k], D, d, **kw))
                pf = float(analytics.pfail_given_d_value(m, D, d, **kw)) / den if den > 0 else 0.0
            total += tree.importance[k] * (1.0 - pf)
        total += future(k, int(tree.remaining_life[k]))
    return total


@dataclass
class FWResult:
    plan: np.ndarray
    value: float
    history: list
    restarts: list


def _lmo(grad, W):
    S = np.zeros_like(grad)
    best = np.argmax(grad, axis=0)
    cols = np.arange(grad.shape[1])
    pos = grad[best, cols] > 0
    S[best[pos], cols[pos]] = W
    return S


def random_plan(K, T, W, rng):
    """Random feasible plan: each column is a Dirichlet split with slack."""
    return W * rng.dirichlet(np.ones(K + 1), size=T).T[:K]


def frank_wolfe_single(tree: GainTree, W: float, X0, max_iters: int = 100,
                       tol: float = 1e-7):
    """One Frank-Wolfe run from ``X0``; returns ``(plan, value, objective trace)``."""
    X = np.array(X0, float)
    val, grad = expected_gain_gradient(tree, X)
    trace = [val]
    last_step = 1.0
    for k in range(max_iters):
        S = _lmo(grad, W)
        Dir = S - X
        gap = float(np.sum(grad * Dir))
        if gap <= tol:
            break
        # backtracking (Armijo) from twice the previous accepted step
        step = min(1.0, 2.0 * last_step)
        new_val = None
        while step >= 1e-6:
            cv = expected_gain_tree(tree, np.maximum(X + step * Dir, 0.0))
            if cv >= val + 1e-4 * step * gap:
                new_val = cv
                break
            step *= 0.5
        if new_val is None:
            step = 2.0 / (k + 2.0)
            cv = expected_gain_tree(tree, np.maximum(X + step * Dir, 0.0))
            if cv <= val:
                break
            new_val = cv
        last_step = step
        X = np.maximum(X + step * Dir, 0.0)
        improvement = new_val - val
        val, grad = expected_gain_gradient(tree, X)
        trace.append(val)
        if improvement < tol:
            break
    return X, val, trace


def frank_wolfe(tree: GainTree, W: float, n_init: int = 20, max_iters: int = 100,
                rng: Optional[np.random.Generator] = None, tol: float = 1e-7,
                initial_points=None) -> FWResult:
    """Multi-start Frank-Wolfe over ``{X >= 0, column sums <= W}``.

    Starts from ``initial_points`` when given, otherwise from ``n_init``
    random feasible plans, and keeps the best local optimum.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    K, T = tree.K, tree.horizon
    starts = (list(initial_points) if initial_points is not None
              else [random_plan(K, T, W, rng) for _ in range(n_init)])
    best_X, best_v, best_trace = None, -math.inf, None
    restarts = []
    for X0 in starts:
        X, v, trace = frank_wolfe_single(tree, W, X0, max_iters=max_iters, tol=tol)
        restarts.append(v)
        if v > best_v:
            best_X, best_v, best_trace = X, v, trace
    return FWResult(plan=best_X, value=best_v, history=best_trace, restarts=restarts)

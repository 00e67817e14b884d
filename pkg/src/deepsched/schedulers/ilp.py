"""Clairvoyant horizon-T integer program (multiple knapsack, time-varying weights).

Maximise ``sum_u alpha_u sum_t x[u, t]`` subject to per-slot capacity
``sum_u w[u, t] x[u, t] <= W`` and ``sum_t x[u, t] <= 1``.
"""
from __future__ import annotations

import math
import time
from typing import Optional

import numpy as np

from .knapsack import SolverStats


def _relaxation(order, pos, caps, minw, values):
    # capacity pooled over slots, each user at its cheapest slot: a fractional
    # knapsack upper bound on what the remaining users can add
    cap = sum(caps)
    val = 0.0
    for j in order[pos:]:
        wj = minw[j]
        if wj <= cap:
            cap -= wj
            val += values[j]
        else:
            val += values[j] * cap / wj
            break
    return val


def _per_slot_relaxation(slot_orders, rank, pos, caps, wth, values):
    # drop the at-most-once constraint: independent fractional knapsacks
    total = 0.0
    for t, order_t in enumerate(slot_orders):
        cap = caps[t]
        for u in order_t:
            if rank[u] < pos:
                continue
            wt = wth[u, t]
            if wt <= cap:
                cap -= wt
                total += values[u]
            else:
                total += values[u] * cap / wt
                break
    return total


def solve_oracle_ilp(values, w_threshold, W: float, time_budget: Optional[float] = None,
                     stats: Optional[SolverStats] = None):
    """Solve the window ILP by depth-first branch and bound.

    Parameters
    ----------
    values : (n,) array
        Importance of each user in the window.
    w_threshold : (n, T) array
        Bandwidth user ``u`` needs in slot ``t``; ``inf`` (or anything above
        ``W``) where it cannot be served.
    time_budget : float, optional
        Seconds after which the incumbent is returned with
        ``stats.optimal = False``.

    Slots are tried earliest first, so among optimal assignments the search
    tends to return one that serves users as early as possible.

    Returns
    -------
    x : (n, T) 0/1 array
    """
    stats = stats if stats is not None else SolverStats()
    values = np.asarray(values, float)
    wth = np.asarray(w_threshold, float)
    n, T = wth.shape if wth.ndim == 2 else (0, 1)
    x = np.zeros((n, T), dtype=int)
    if n == 0:
        stats.objective = stats.bound = 0.0
        return x
    feasible = (wth <= W) & np.isfinite(wth)
    users = [u for u in range(n) if values[u] > 0 and feasible[u].any()]
    minw = {u: float(wth[u, feasible[u]].min()) for u in users}
    order = sorted(users, key=lambda u: (-values[u] / minw[u] if minw[u] > 0 else -math.inf,
                                         minw[u], u))
    slot_opts = {u: np.flatnonzero(feasible[u]).tolist() for u in users}
    rank = {u: r for r, u in enumerate(order)}
    slot_orders = [sorted((u for u in users if feasible[u, t]),
                          key=lambda u: -values[u] / max(wth[u, t], 1e-300)) for t in range(T)]

    total_bound = min(_relaxation(order, 0, [W] * T, minw, values),
                      _per_slot_relaxation(slot_orders, rank, 0, [W] * T, wth, values))
    best_val = -1.0
    best = {}
    start = time.perf_counter()
    m = len(order)
    caps = [W] * T
    assign = {}

    # recursive DFS is fine: depth <= number of users in the window
    def dfs(pos, val):
        nonlocal best_val, best
        stats.nodes += 1
        if time_budget is not None and time.perf_counter() - start > time_budget:
            stats.optimal = False
            return True
        if pos == m:
            if val > best_val + 1e-12:
                best_val = val
                best = dict(assign)
            return best_val >= total_bound - 1e-12
        bound = val + min(_relaxation(order, pos, caps, minw, values),
                          _per_slot_relaxation(slot_orders, rank, pos, caps, wth, values))
        if bound <= best_val + 1e-12:
            return False
        u = order[pos]
        for t in slot_opts[u]:
            if wth[u, t] <= caps[t]:
                old = caps[t]
                caps[t] = old - wth[u, t]
                assign[u] = t
                stop = dfs(pos + 1, val + values[u])
                del assign[u]
                caps[t] = old
                if stop:
                    return True
        return dfs(pos + 1, val)

    dfs(0, 0.0)
    for u, t in best.items():
        x[u, t] = 1
    stats.objective = float(np.sum(values * x.sum(axis=1)))
    stats.bound = stats.objective if stats.optimal else float(total_bound)
    return x

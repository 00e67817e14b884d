"""0/1 knapsack solvers for the myopic full-CSI benchmark."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np


@dataclass(frozen=True)
class KnapsackInstance:
    values: np.ndarray
    weights: np.ndarray
    capacity: float

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, float))
        object.__setattr__(self, "weights", np.asarray(self.weights, float))
        if self.values.shape != self.weights.shape:
            raise ValueError("values and weights must have the same length")
        if self.capacity < 0:
            raise ValueError("capacity must be >= 0")


@dataclass
class SolverStats:
    """Diagnostics from one solve."""

    nodes: int = 0
    optimal: bool = True
    bound: float = math.nan
    objective: float = math.nan
    iterations: int = 0

    @property
    def gap(self) -> float:
        if math.isnan(self.bound) or math.isnan(self.objective):
            return math.nan
        return self.bound - self.objective


def _order(values, weights, idx):
    # ratio desc, then smaller weight, then lower index
    return sorted(idx, key=lambda i: (-values[i] / weights[i] if weights[i] > 0 else -math.inf,
                                      weights[i], i))


def _branch_and_bound(values, weights, capacity, stats):
    n = len(values)
    free = [i for i in range(n) if weights[i] <= 0 and values[i] > 0]
    cand = [i for i in range(n) if 0 < weights[i] <= capacity and values[i] > 0]
    order = _order(values, weights, cand)
    v = [values[i] for i in order]
    w = [weights[i] for i in order]
    m = len(order)

    best_val = -1.0
    best_set: Tuple[int, ...] = ()

    def bound(level, cap, val):
        for j in range(level, m):
            if w[j] <= cap:
                cap -= w[j]
                val += v[j]
            else:
                return val + v[j] * cap / w[j]
        return val

    # iterative DFS: (level, remaining capacity, value, chosen)
    stack = [(0, capacity, 0.0, ())]
    while stack:
        level, cap, val, chosen = stack.pop()
        stats.nodes += 1
        if level == m:
            if val > best_val:
                best_val, best_set = val, chosen
            continue
        if bound(level, cap, val) <= best_val + 1e-12:
            continue
        # push exclude first so include is explored first
        stack.append((level + 1, cap, val, chosen))
        if w[level] <= cap:
            stack.append((level + 1, cap - w[level], val + v[level], chosen + (level,)))
    selected = sorted([order[j] for j in best_set] + free)
    return selected


def _blocks_dp(values, weights, capacity, block):
    n_blocks = int(math.floor(capacity / block + 1e-9))
    need = np.ceil(np.asarray(weights) / block - 1e-9).astype(np.int64)
    items = [i for i in range(len(values)) if values[i] > 0 and need[i] <= n_blocks]
    free = [i for i in items if need[i] <= 0]
    items = [i for i in items if need[i] > 0]
    # dp[i][b]: best value using first i items within b blocks
    best = np.zeros((len(items) + 1, n_blocks + 1))
    for r, i in enumerate(items, start=1):
        best[r] = best[r - 1]
        c = need[i]
        if c <= n_blocks:
            cand = best[r - 1, : n_blocks + 1 - c] + values[i]
            best[r, c:] = np.maximum(best[r - 1, c:], cand)
    chosen = []
    b = n_blocks
    for r in range(len(items), 0, -1):
        if best[r, b] != best[r - 1, b]:
            i = items[r - 1]
            chosen.append(i)
            b -= need[i]
    return sorted(chosen + free)


def solve_knapsack(inst: KnapsackInstance, mode: str = "exact",
                   block: Optional[float] = None, stats: Optional[SolverStats] = None):
    """Return the indices of an optimal item subset.

    ``mode='exact'`` runs depth-first branch and bound with the fractional
    (Dantzig) bound. ``mode='blocks'`` rounds every weight up to a whole number
    of resource blocks of size ``block`` and solves the quantised instance by
    dynamic programming over block counts.
    """
    stats = stats if stats is not None else SolverStats()
    values, weights = inst.values, inst.weights
    if mode == "exact":
        sel = _branch_and_bound(values, weights, inst.capacity, stats)
    elif mode == "blocks":
        if not block or block <= 0:
            raise ValueError("blocks mode needs a positive block size")
        sel = _blocks_dp(values, weights, inst.capacity, block)
    else:
        raise ValueError(f"unknown knapsack mode {mode!r}")
    stats.objective = float(np.sum(values[sel])) if sel else 0.0
    stats.bound = stats.objective
    return sel

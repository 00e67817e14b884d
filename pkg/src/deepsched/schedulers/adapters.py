"""Solver-to-allocation adapters for the conventional schedulers."""
from __future__ import annotations

from typing import Optional

import numpy as np

from ..env import spectral_efficiency
from ..exceptions import UnsupportedModeError
from ..validation import as_generator, clip_to_budget
from .base import BaseScheduler, greedy_allocate
from .exp_rule import ExpRuleState, exp_rule_rank
from .frank_wolfe import GainTree, frank_wolfe
from .ilp import solve_oracle_ilp
from .knapsack import KnapsackInstance, SolverStats, solve_knapsack


def _costs(obs, block):
    from ..traces import quantize_blocks

    wth = obs.w_threshold
    if block:
        return quantize_blocks(wth, block), np.floor(obs.total_bandwidth / block + 1e-9) * block
    return wth, obs.total_bandwidth


class MyopicKnapsackScheduler(BaseScheduler):
    """Per-slot optimum with full CSI: serve the most valuable affordable subset.

    Parameters
    ----------
    mode : {'exact', 'blocks'}
        ``'blocks'`` rounds requirements up to resource blocks of ``block`` Hz.
    block : float, optional
        Resource-block size; required for ``mode='blocks'``. In exact mode a
        block size still quantises the grants.
    """

    csi_mode = "full"

    def __init__(self, mode: str = "exact", block: Optional[float] = None):
        self.mode = mode
        self.block = block

    def fit(self, env, y=None):
        if self.mode not in ("exact", "blocks"):
            raise ValueError(f"unknown knapsack mode {self.mode!r}")
        if self.mode == "blocks" and not (self.block and self.block > 0):
            raise ValueError("blocks mode needs a positive block size")
        return super().fit(env)

    def _allocate(self, obs):
        cost, budget = _costs(obs, self.block)
        cand = np.flatnonzero(obs.mask & (cost <= budget))
        alloc = np.zeros(obs.K)
        stats = SolverStats()
        if cand.size:
            inst = KnapsackInstance(obs.importance[cand], cost[cand], budget)
            if self.mode == "blocks":
                sel = solve_knapsack(inst, "blocks", block=self.block, stats=stats)
            else:
                sel = solve_knapsack(inst, "exact", stats=stats)
            alloc[cand[sel]] = cost[cand[sel]]
        self.last_stats_ = stats
        return alloc


class OracleILPScheduler(BaseScheduler):
    """Clairvoyant receding-horizon integer program (upper-bound benchmark).

    Parameters
    ----------
    horizon : int
        Window length ``T`` in slots.
    time_budget : float, optional
        Seconds per solve before falling back to the incumbent.
    """

    csi_mode = "full"
    requires_oracle = True

    def __init__(self, horizon: int = 3, time_budget: Optional[float] = None):
        self.horizon = horizon
        self.time_budget = time_budget

    @property
    def oracle_horizon(self):
        return self.horizon

    def _allocate(self, obs):
        win = obs.oracle
        if win is None:
            raise ValueError("oracle window missing; build the observation with observe_for()")
        stats = SolverStats()
        x = solve_oracle_ilp(win.importance, win.w_threshold, obs.total_bandwidth,
                             time_budget=self.time_budget, stats=stats)
        self.last_stats_ = stats
        alloc = np.zeros(obs.K)
        for r in np.flatnonzero(x[:, 0] if x.size else []):
            alloc[win.position[r]] = win.w_threshold[r, 0]
        return alloc


class FrankWolfeScheduler(BaseScheduler):
    """Statistical-CSI benchmark: Frank-Wolfe on the expected-gain tree.

    Parameters
    ----------
    horizon : int
        Tree depth ``T``.
    n_init : int
        Random restarts.
    max_iters : int
        Iterations per restart.
    design : {'auto', 'iid', 'constant'}
        Channel model of the objective. ``'auto'`` uses the i.i.d. design for
        ``rho < 0.5`` and the constant one otherwise.
    tol : float
        Stop once the Frank-Wolfe gap (an upper bound on the first-order
        improvement, in expected importance-weighted users) falls below this.
    random_state : int, optional
    """

    csi_mode = "none"

    def __init__(self, horizon: int = 3, n_init: int = 20, max_iters: int = 100,
                 design: str = "auto", tol: float = 1e-4, random_state=0):
        self.horizon = horizon
        self.n_init = n_init
        self.max_iters = max_iters
        self.design = design
        self.tol = tol
        self.random_state = random_state

    def fit(self, env, y=None):
        super().fit(env)
        if self.design == "auto":
            self.design_ = "iid" if self.channel_.rho < 0.5 else "constant"
        elif self.design in ("iid", "constant"):
            self.design_ = self.design
        else:
            raise UnsupportedModeError(f"unknown design {self.design!r}")
        return self

    def reset(self, seed=None):
        self._rng = as_generator(self.random_state if seed is None else seed)
        return self

    def build_tree(self, obs) -> GainTree:
        hist = obs.history
        return GainTree(
            horizon=self.horizon, importance=obs.importance, data_size=obs.data_size,
            distance=obs.distance, remaining_life=obs.remaining_life, active=obs.mask,
            hist_max=hist.max(axis=1) if hist.size else np.zeros(obs.K),
            classes=self.classes_, channel=self.channel_, design=self.design_)

    def _allocate(self, obs):
        W = obs.total_bandwidth
        if not np.any(obs.mask) or W <= 0:
            return np.zeros(obs.K)
        res = frank_wolfe(self.build_tree(obs), W, n_init=self.n_init,
                          max_iters=self.max_iters, rng=self._rng, tol=self.tol)
        self.last_result_ = res
        # receding horizon: only the current column is applied
        return clip_to_budget(np.where(obs.mask, res.plan[:, 0], 0.0), W)


class ExpRuleScheduler(BaseScheduler):
    """Exponential-rule ranking served greedily with full CSI.

    Parameters
    ----------
    delta : float
        Delay-violation probability used for every user.
    block : float, optional
        Resource-block size for quantised grants.
    """

    csi_mode = "full"

    def __init__(self, delta: float = 0.05, block: Optional[float] = None):
        self.delta = delta
        self.block = block

    def reset(self, seed=None):
        self._sums = {}
        return self

    def _allocate(self, obs):
        ch = self.channel_
        rate = spectral_efficiency(obs.kappa, np.abs(obs.fading) ** 2, ch.power)
        mean = np.zeros(obs.K)
        live = set()
        for k in range(obs.K):
            uid = int(obs.user_id[k])
            live.add(uid)
            tot, n = self._sums.get(uid, (0.0, 0))
            tot, n = tot + rate[k], n + 1
            self._sums[uid] = (tot, n)
            mean[k] = tot / n
        # forget departed users
        self._sums = {u: v for u, v in self._sums.items() if u in live}
        act = np.flatnonzero(obs.mask)
        alloc = np.zeros(obs.K)
        if act.size == 0:
            return alloc
        state = ExpRuleState(waited=obs.latency[act] - obs.remaining_life[act],
                             remaining=obs.remaining_life[act], rate=rate[act],
                             mean_rate=mean[act], delta=self.delta)
        order = act[exp_rule_rank(state)]
        return greedy_allocate(order, obs.w_threshold, obs.total_bandwidth, self.block)


class RandomScheduler(BaseScheduler):
    """Uniform-random split: Dirichlet(1) portions of ``W`` over the active users."""

    csi_mode = "none"

    def __init__(self, random_state=0):
        self.random_state = random_state

    def reset(self, seed=None):
        self._rng = as_generator(self.random_state if seed is None else seed)
        return self

    def _allocate(self, obs):
        alloc = np.zeros(obs.K)
        act = np.flatnonzero(obs.mask)
        if act.size:
            alloc[act] = obs.total_bandwidth * self._rng.dirichlet(np.ones(act.size))
        return alloc

"""Estimator-style interface shared by every scheduler.

A scheduler is fitted to an environment (to learn its scenario constants, or
weights for the learned one) and then maps observations to allocations::

    sched = MyopicKnapsackScheduler().fit(env)
    obs = observe_for(sched, env)
    w = sched.predict(obs)
"""
from __future__ import annotations

from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator

from ..validation import check_allocation, check_observation


class BaseScheduler(BaseEstimator):
    """Base class; subclasses implement :meth:`_allocate`.

    Class attributes
    ----------------
    csi_mode : {'full', 'none'}
        Observation type the scheduler consumes.
    requires_oracle : bool
        True when the scheduler reads ``obs.oracle`` (clairvoyant window).
    """

    csi_mode = "full"
    requires_oracle = False
    oracle_horizon = 1

    def fit(self, env, y=None):
        self.scenario_ = env.scenario
        self.classes_ = env.scenario.class_table
        self.channel_ = env.scenario.channel
        self.W_ = env.scenario.W
        self.n_features_ = env.n_features[self.csi_mode]
        self.reset()
        return self

    def reset(self, seed: Optional[int] = None):
        """Clear per-episode state."""
        return self

    def predict(self, obs) -> np.ndarray:
        check_observation(obs, self.csi_mode)
        w = self._allocate(obs)
        return check_allocation(w, obs.total_bandwidth, obs.K)

    def _allocate(self, obs) -> np.ndarray:  # pragma: no cover - abstract
        raise NotImplementedError

    @property
    def name(self) -> str:
        return type(self).__name__


def observe_for(scheduler: BaseScheduler, env):
    """Observation in the scheduler's CSI mode, plus the oracle window if needed."""
    obs = env.observe(scheduler.csi_mode)
    if scheduler.requires_oracle:
        obs.oracle = env.oracle_window(scheduler.oracle_horizon)
    return obs


def greedy_allocate(order, w_threshold, W: float, block: Optional[float] = None):
    """Grant ``w_th`` in the given order, skipping users that no longer fit.

    With ``block`` the grants are rounded up to whole resource blocks and the
    budget is ``floor(W / block)`` blocks.
    """
    from ..traces import quantize_blocks

    w_threshold = np.asarray(w_threshold, float)
    alloc = np.zeros_like(w_threshold)
    if block:
        cost = quantize_blocks(w_threshold, block)
        budget = np.floor(W / block + 1e-9) * block
    else:
        cost = w_threshold
        budget = W
    left = budget
    for k in order:
        c = cost[k]
        if np.isfinite(c) and c <= left * (1 + 1e-12):
            alloc[k] = c
            left -= c
    return alloc

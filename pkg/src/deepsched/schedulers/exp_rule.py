"""Exponential rule: delay-aware proportional fair ranking."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass
class ExpRuleState:
    """Inputs of the index for the users competing in one slot.

    Parameters
    ----------
    waited : array
        Slots already spent in the system.
    remaining : array
        Slots left, counting the current one.
    rate : array
        Instantaneous rate (here spectral efficiency, bit/s/Hz).
    mean_rate : array
        Running mean of ``rate`` since arrival, current slot included.
    delta : array or float
        Tolerated delay-violation probability, in (0, 1).
    """

    waited: np.ndarray
    remaining: np.ndarray
    rate: np.ndarray
    mean_rate: np.ndarray
    delta: np.ndarray = 0.05

    def __post_init__(self):
        self.waited = np.asarray(self.waited, float)
        self.remaining = np.asarray(self.remaining, float)
        self.rate = np.asarray(self.rate, float)
        self.mean_rate = np.asarray(self.mean_rate, float)
        self.delta = np.broadcast_to(np.asarray(self.delta, float), self.rate.shape).copy()
        if np.any((self.delta <= 0) | (self.delta >= 1)):
            raise ValueError("delta must lie in (0, 1)")


def exp_rule_index(state: ExpRuleState) -> np.ndarray:
    """Index ``gamma R exp((a w - m) / (1 + sqrt(m)))``; ``nan`` for expired users.

    ``a = -ln(delta) / l``, ``gamma = a / mean_rate`` and ``m`` is the mean of
    ``a w`` over the users still in the ranking.
    """
    alive = state.remaining > 0
    out = np.full(state.rate.shape, np.nan)
    if not np.any(alive):
        return out
    a = -np.log(state.delta[alive]) / state.remaining[alive]
    aw = a * state.waited[alive]
    m = float(np.mean(aw))
    with np.errstate(divide="ignore", invalid="ignore"):
        gamma = np.where(state.mean_rate[alive] > 0, a / state.mean_rate[alive], 0.0)
    out[alive] = gamma * state.rate[alive] * np.exp((aw - m) / (1.0 + math.sqrt(m)))
    return out


def exp_rule_rank(state: ExpRuleState) -> np.ndarray:
    """Users in decreasing index order; expired users are left out."""
    j = exp_rule_index(state)
    idx = np.flatnonzero(~np.isnan(j))
    # stable sort keeps the lower position first on ties
    return idx[np.argsort(-j[idx], kind="stable")]

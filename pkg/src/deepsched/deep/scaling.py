"""Reward scaling by running statistics of the discounted return."""
from __future__ import annotations

import math

STD_EPS = 1e-8


class RunningStats:
    """Welford accumulator; ``std`` is the population value ``sqrt(M2 / n)``."""

    def __init__(self):
        self.count = 0
        self.mean = 0.0
        self.m2 = 0.0

    def add(self, x: float):
        self.count += 1
        d = x - self.mean
        self.mean += d / self.count
        self.m2 += d * (x - self.mean)

    @property
    def var(self) -> float:
        return self.m2 / self.count if self.count else 0.0

    @property
    def std(self) -> float:
        return math.sqrt(self.var)


class RewardScaler:
    """``R_t = gamma R_{t-1} + r_t``; returns ``(r_t - mean(R)) / std(R)``.

    Parameters
    ----------
    gamma : float
    eps : float
        Floor on the standard deviation, active until a variance exists.
    """

    def __init__(self, gamma: float = 0.95, eps: float = STD_EPS):
        self.gamma = gamma
        self.eps = eps
        self.ret = 0.0
        self.stats = RunningStats()

    def __call__(self, r: float) -> float:
        self.ret = self.gamma * self.ret + r
        self.stats.add(self.ret)
        return (r - self.stats.mean) / max(self.stats.std, self.eps)

    def reset_return(self):
        """Start a new accumulator ``R`` (statistics are kept)."""
        self.ret = 0.0

    def state(self) -> dict:
        s = self.stats
        return {"gamma": self.gamma, "eps": self.eps, "ret": self.ret,
                "count": s.count, "mean": s.mean, "m2": s.m2}

    def load_state(self, st: dict):
        self.gamma, self.eps, self.ret = float(st["gamma"]), float(st["eps"]), float(st["ret"])
        self.stats.count, self.stats.mean, self.stats.m2 = int(st["count"]), float(st["mean"]), float(st["m2"])
        return self

"""Episode rollouts and their metrics, shared by training and the benchmark."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .env import SchedulingEnv


@dataclass
class EpisodeMetrics:
    """Outcome of one episode.

    ``satisfied[c]`` / ``departed[c]`` count users of class ``c`` (1-based,
    the null class 0 is never counted) that left the system in the episode.
    """

    gain: float
    n_slots: int
    satisfied: np.ndarray
    departed: np.ndarray
    delivered_bits: float
    sim_seconds: float
    wall_seconds: float = 0.0
    extra: dict = field(default_factory=dict)

    @property
    def gain_per_slot(self) -> float:
        return self.gain / self.n_slots if self.n_slots else 0.0

    @property
    def satisfaction(self) -> np.ndarray:
        """Per-class satisfaction probability, ``nan`` for classes with no departures."""
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.departed > 0, self.satisfied / np.maximum(self.departed, 1), np.nan)

    @property
    def rate_mbps(self) -> float:
        return self.delivered_bits / self.sim_seconds / 1e6 if self.sim_seconds else 0.0


def run_episode(scheduler, env: SchedulingEnv, seed: int) -> EpisodeMetrics:
    """Roll out ``scheduler`` (already fitted) for one episode of ``env``."""
    from .schedulers.base import observe_for

    n_cls = len(env.table)
    env.reset(seed)
    scheduler.reset(seed)
    gain = bits = 0.0
    t0 = time.perf_counter()
    while not env.done:
        obs = observe_for(scheduler, env)
        w = scheduler.predict(obs)
        _, r, success = env.step(w)
        gain += r
        bits += float(np.sum(obs.data_size[success]))
    wall = time.perf_counter() - t0
    sat = np.zeros(n_cls)
    dep = np.zeros(n_cls)
    for c, ok in env.departed:
        dep[c] += 1
        sat[c] += ok
    n = env.scenario.n_slots
    return EpisodeMetrics(gain=gain, n_slots=n, satisfied=sat[1:], departed=dep[1:],
                          delivered_bits=bits, sim_seconds=n * env.scenario.channel.slot_duration,
                          wall_seconds=wall)

"""Fixed-capacity FIFO replay buffer over preallocated arrays."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class Batch:
    feats: np.ndarray
    mask: np.ndarray
    action: np.ndarray
    reward: np.ndarray
    next_feats: np.ndarray
    next_mask: np.ndarray
    done: np.ndarray

    def __len__(self):
        return len(self.reward)


class ReplayBuffer:
    """Ring buffer of transitions; the oldest entry is overwritten first.

    Parameters
    ----------
    capacity : int
    n_users, n_features : int
        Per-transition observation shape ``(K, F)``.
    """

    def __init__(self, capacity: int, n_users: int, n_features: int):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        K, F = n_users, n_features
        self.feats = np.zeros((capacity, K, F))
        self.mask = np.zeros((capacity, K), bool)
        self.action = np.zeros((capacity, K))
        self.reward = np.zeros(capacity)
        self.next_feats = np.zeros((capacity, K, F))
        self.next_mask = np.zeros((capacity, K), bool)
        self.done = np.zeros(capacity, bool)
        self.pos = 0
        self.size = 0

    def __len__(self):
        return self.size

    def push(self, feats, mask, action, reward, next_feats, next_mask, done=False):
        i = self.pos
        self.feats[i] = feats
        self.mask[i] = mask
        self.action[i] = action
        self.reward[i] = reward
        self.next_feats[i] = next_feats
        self.next_mask[i] = next_mask
        self.done[i] = done
        self.pos = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator) -> Batch:
        """Uniform draw with replacement."""
        idx = rng.integers(0, self.size, size=batch_size)
        return self.take(idx)

    def take(self, idx) -> Batch:
        return Batch(self.feats[idx], self.mask[idx], self.action[idx], self.reward[idx],
                     self.next_feats[idx], self.next_mask[idx], self.done[idx])

    def state(self) -> dict:
        n = self.size
        return {k: getattr(self, k)[:n] for k in
                ("feats", "mask", "action", "reward", "next_feats", "next_mask", "done")}

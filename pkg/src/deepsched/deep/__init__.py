"""Learned scheduler: Deep-Sets actor, quantile critic and training loop."""

from .agent import Adam, DeepScheduler
from .autodiff import Tensor
from .networks import (Actor, Critic, check_param_budget, masked_normalize, quantile_loss,
                       quantile_midpoints, soft_update)
from .replay import Batch, ReplayBuffer
from .scaling import RewardScaler, RunningStats

__all__ = ["Adam", "DeepScheduler", "Tensor", "Actor", "Critic", "check_param_budget",
           "masked_normalize", "quantile_loss", "quantile_midpoints", "soft_update",
           "Batch", "ReplayBuffer", "RewardScaler", "RunningStats"]

"""Conventional schedulers and their solvers."""

from .adapters import (ExpRuleScheduler, FrankWolfeScheduler, MyopicKnapsackScheduler,
                       OracleILPScheduler, RandomScheduler)
from .base import BaseScheduler, greedy_allocate, observe_for
from .exp_rule import ExpRuleState, exp_rule_index, exp_rule_rank
from .frank_wolfe import (GainTree, expected_gain_gradient, expected_gain_tree,
                          expected_gain_tree_recursive, frank_wolfe)
from .ilp import solve_oracle_ilp
from .knapsack import KnapsackInstance, SolverStats, solve_knapsack

__all__ = [
    "BaseScheduler", "observe_for", "greedy_allocate",
    "MyopicKnapsackScheduler", "OracleILPScheduler", "FrankWolfeScheduler",
    "ExpRuleScheduler", "RandomScheduler",
    "KnapsackInstance", "SolverStats", "solve_knapsack", "solve_oracle_ilp",
    "GainTree", "expected_gain_tree", "expected_gain_tree_recursive",
    "expected_gain_gradient", "frank_wolfe",
    "ExpRuleState", "exp_rule_index", "exp_rule_rank",
]

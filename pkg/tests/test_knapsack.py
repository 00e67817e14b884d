import itertools
import math

import numpy as np
import pytest

from deepsched.schedulers import KnapsackInstance, SolverStats, solve_knapsack


def brute_force(values, weights, capacity):
    best = 0.0
    n = len(values)
    for r in range(n + 1):
        for sub in itertools.combinations(range(n), r):
            if sum(weights[i] for i in sub) <= capacity:
                best = max(best, sum(values[i] for i in sub))
    return best


def random_instance(rng, n):
    values = rng.choice([1.0, 2.0, 3.0], n) if rng.random() < 0.5 else rng.uniform(0.1, 5, n)
    weights = rng.uniform(0.05, 1.0, n)
    return KnapsackInstance(values, weights, float(rng.uniform(0, 0.6 * weights.sum())))


def test_zero_capacity_selects_nothing():
    inst = KnapsackInstance([1.0, 2.0], [0.5, 0.5], 0.0)
    assert solve_knapsack(inst) == []


def test_pairwise_exclusion():
    W = 1.0
    sel = solve_knapsack(KnapsackInstance([1.0, 1.0], [0.6 * W, 0.6 * W], W))
    assert len(sel) == 1


def test_zero_weight_items_always_taken():
    sel = solve_knapsack(KnapsackInstance([1.0, 1.0, 5.0], [0.0, 0.4, 2.0], 0.5))
    assert sel == [0, 1]


def test_ties_prefer_smaller_weight_then_lower_index():
    # equal ratio: the lighter item wins; equal everything: the lower index
    assert solve_knapsack(KnapsackInstance([2.0, 1.0], [1.0, 0.5], 0.9)) == [1]
    assert solve_knapsack(KnapsackInstance([1.0, 1.0], [0.5, 0.5], 0.6)) == [0]


@pytest.mark.parametrize("seed", range(5))
def test_exact_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    for _ in range(20):
        inst = random_instance(rng, int(rng.integers(1, 13)))
        stats = SolverStats()
        sel = solve_knapsack(inst, stats=stats)
        assert inst.weights[sel].sum() <= inst.capacity
        assert inst.values[sel].sum() == pytest.approx(brute_force(inst.values, inst.weights, inst.capacity))
        assert stats.optimal and stats.gap == 0.0


def test_blocks_mode_optimal_for_quantised_instance():
    rng = np.random.default_rng(11)
    block = 0.1
    for _ in range(40):
        inst = random_instance(rng, int(rng.integers(1, 11)))
        sel = solve_knapsack(inst, "blocks", block=block)
        q = np.ceil(inst.weights / block - 1e-9) * block
        cap = math.floor(inst.capacity / block + 1e-9) * block
        assert q[sel].sum() <= cap + 1e-9
        assert inst.values[sel].sum() == pytest.approx(brute_force(inst.values, q, cap + 1e-9))


def test_invalid_inputs():
    with pytest.raises(ValueError):
        KnapsackInstance([1.0], [1.0, 2.0], 1.0)
    with pytest.raises(ValueError):
        KnapsackInstance([1.0], [1.0], -1.0)
    inst = KnapsackInstance([1.0], [1.0], 1.0)
    with pytest.raises(ValueError):
        solve_knapsack(inst, "blocks")
    with pytest.raises(ValueError):
        solve_knapsack(inst, "greedy")

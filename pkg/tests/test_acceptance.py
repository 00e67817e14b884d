"""Acceptance criteria A1-A10.

Each test records one PASS/FAIL line (printed in the terminal summary) and
then asserts. A8 and A9 train the learned scheduler for 50k steps per seed
and dominate the runtime of the suite.
"""
import itertools
import math
import time

import numpy as np
import pytest
from scipy import integrate

from conftest import record
from deepsched import analytics as an
from deepsched import bench
from deepsched.deep import Adam, Actor, Critic, DeepScheduler, RewardScaler, check_param_budget
from deepsched.deep import quantile_loss, quantile_midpoints
from deepsched.env import ChannelParams, SchedulingEnv, sample_distance
from deepsched.schedulers import (ExpRuleState, KnapsackInstance, exp_rule_index, frank_wolfe,
                                  solve_knapsack, solve_oracle_ilp)
from deepsched.schedulers.frank_wolfe import frank_wolfe_single, random_plan

CH = ChannelParams()
PHYS = dict(power=CH.power, C_pl=CH.C_pl, n_pl=CH.n_pl, noise_psd=CH.noise_psd)

SEEDS = [0, 1, 2, 3, 4]
EVAL_EPISODES = 20
N_STEPS = 50_000


# -- A1 -------------------------------------------------------------------------------

def _brute_knapsack(values, weights, capacity):
    n = len(values)
    masks = (np.arange(2 ** n)[:, None] >> np.arange(n)[None, :]) & 1
    ok = masks @ weights <= capacity
    return float(np.max((masks @ values)[ok]))


def test_a1_knapsack_exactness():
    rng = np.random.default_rng(101)
    insts = []
    for _ in range(200):
        n = int(rng.integers(1, 16))
        v = rng.choice([1.0, 2.0, 3.0], n) if rng.random() < 0.5 else rng.uniform(0.1, 5, n)
        w = rng.uniform(0.05, 1.0, n)
        insts.append(KnapsackInstance(v, w, float(rng.uniform(0, 0.6 * w.sum()))))
    t0 = time.perf_counter()
    sols = [solve_knapsack(inst) for inst in insts]
    elapsed = time.perf_counter() - t0
    mismatches = sum(
        not math.isclose(inst.values[sel].sum(), _brute_knapsack(inst.values, inst.weights, inst.capacity),
                         rel_tol=1e-12, abs_tol=1e-12) or inst.weights[sel].sum() > inst.capacity
        for inst, sel in zip(insts, sols))
    ok = mismatches == 0 and elapsed < 10.0
    record("A1", ok, f"{200 - mismatches}/200 match brute force, solver time {elapsed:.3f}s (< 10s)")
    assert ok


# -- A2 ---------------------------------------------------------------------------------

def _enumerate_ilp(values, wth, W):
    n, T = wth.shape
    best = 0.0
    for choice in itertools.product(range(-1, T), repeat=n):
        load = np.zeros(T)
        val = 0.0
        for u, t in enumerate(choice):
            if t < 0:
                continue
            if not np.isfinite(wth[u, t]):
                break
            load[t] += wth[u, t]
            val += values[u]
        else:
            if np.all(load <= W):
                best = max(best, val)
    return best


def test_a2_ilp_exactness_and_dominance():
    rng = np.random.default_rng(202)
    exact = total = 0
    # n users x T slots binary variables, at most 12
    for n, T in ((4, 3), (6, 2), (12, 1), (3, 4), (5, 2)):
        for _ in range(10):
            values = rng.choice([1.0, 2.0], n)
            wth = rng.uniform(0.1, 1.2, (n, T))
            wth[rng.random((n, T)) < 0.3] = np.inf
            x = solve_oracle_ilp(values, wth, 1.0)
            exact += math.isclose((values * x.sum(axis=1)).sum(), _enumerate_ilp(values, wth, 1.0))
            total += 1
    cfg = bench.load_config("table1a")
    # scarce enough that looking ahead matters
    env = SchedulingEnv(cfg.scenario.with_(W=1e4))
    ilp, _, _ = bench.evaluate_scheduler({"type": "ilp", "horizon": 3}, env, 0, 100)
    knap, _, _ = bench.evaluate_scheduler({"type": "knapsack"}, env, 0, 100)
    dominated = sum(a.gain >= b.gain - 1e-9 for a, b in zip(ilp, knap))
    strict = sum(a.gain > b.gain + 1e-9 for a, b in zip(ilp, knap))
    ok = exact == total and dominated == 100
    record("A2", ok, f"enumeration {exact}/{total}; ILP >= knapsack in {dominated}/100 episodes "
                     f"({strict} strictly), K=10 T=3 W=1e4")
    assert ok


# -- A3 -----------------------------------------------------------------------------------

def _grid(rng, n=20):
    pts = []
    while len(pts) < n:
        w = 10 ** rng.uniform(2.3, 4.3)
        D = float(rng.choice([2000.0, 16000.0]))
        d = rng.uniform(0.05, 1.0)
        p = an.pfail_given_d_value(w, D, d, **PHYS)
        pa = an.pfail_avg_value(w, D, d_min=CH.d_min, d_max=CH.d_max, **PHYS)
        if 0.02 < p < 0.98 and 0.02 < pa < 0.98:
            pts.append((w, D, d))
    return pts


def test_a3_closed_forms_against_monte_carlo():
    rng = np.random.default_rng(303)
    mc = np.random.default_rng(304)
    n = 10 ** 6
    err_d = err_avg = err_phi = err_quad = 0.0
    for w, D, d in _grid(rng):
        g = CH.kappa(d) * CH.power
        h2 = mc.exponential(size=n)
        err_d = max(err_d, abs(float(an.pfail_given_d_value(w, D, d, **PHYS))
                               - np.mean(w * np.log2(1 + g * h2) < D)))
        pa = float(an.pfail_avg_value(w, D, d_min=CH.d_min, d_max=CH.d_max, **PHYS))
        dd = sample_distance(CH, mc, n)
        err_avg = max(err_avg, abs(pa - np.mean(w * np.log2(1 + CH.kappa(dd) * CH.power
                                                             * mc.exponential(size=n)) < D)))
        dens = lambda x: float(an.pfail_given_d_value(w, D, x, **PHYS)) * 2 * x / (CH.d_max ** 2 - CH.d_min ** 2)
        quad, _ = integrate.quad(dens, CH.d_min, CH.d_max, epsabs=1e-13, epsrel=1e-12, limit=200)
        err_quad = max(err_quad, abs(pa - quad))
        # one-step transition: the first bandwidth fails with a non-negligible probability
        rho = rng.uniform(0.0, 0.95)
        w1 = w * 10 ** rng.uniform(-0.3, 0.3)
        h0 = (mc.standard_normal(n) + 1j * mc.standard_normal(n)) / math.sqrt(2)
        h1 = rho * h0 + (mc.standard_normal(n) + 1j * mc.standard_normal(n)) * math.sqrt((1 - rho ** 2) / 2)
        f0 = w * np.log2(1 + g * np.abs(h0) ** 2) < D
        f1 = w1 * np.log2(1 + g * np.abs(h1) ** 2) < D
        phi = an.phi_markov_one_step(w, w1, rho, d=d, D=D, **PHYS)
        err_phi = max(err_phi, abs(phi - f1[f0].mean()))
    ok = max(err_d, err_avg, err_phi) < 1e-2 and err_quad < 1e-8
    record("A3", ok, f"max |MC err| given-d {err_d:.1e}, averaged {err_avg:.1e}, phi {err_phi:.1e} "
                     f"(< 1e-2); quadrature {err_quad:.1e} (< 1e-8); 20 points")
    assert ok


# -- A4 ------------------------------------------------------------------------------------

def _richardson(f, x, h):
    # two central differences combined to cancel the O(h^2) truncation term
    c = lambda s: (f(x + s) - f(x - s)) / (2 * s)
    return (4 * c(h / 2) - c(h)) / 3


def test_a4_derivative_check():
    rng = np.random.default_rng(404)
    worst = 0.0
    for _ in range(100):
        w = 10 ** rng.uniform(2.5, 4.5)
        D = 10 ** rng.uniform(3, 4.3)
        kw = dict(d_min=CH.d_min, d_max=CH.d_max, **PHYS)
        g = float(an.dpfail_avg_dw_value(w, D, **kw))
        fd = _richardson(lambda x: float(an.pfail_avg_value(x, D, **kw)), w, 1e-3 * w)
        if abs(fd) < 1e-14:
            worst = max(worst, 0.0 if abs(g) < 1e-12 else math.inf)
            continue
        worst = max(worst, abs(g - fd) / abs(fd))
    ok = worst < 1e-5
    record("A4", ok, f"max relative error {worst:.1e} over 100 queries (< 1e-5)")
    assert ok


# -- A5 -----------------------------------------------------------------------------------

def test_a5_frank_wolfe():
    from test_frank_wolfe import TABLE, random_tree

    rng = np.random.default_rng(505)
    W = 5000.0
    worst_drop = 0.0
    for i in range(50):
        tree = random_tree(rng, K=4, T=2 + i % 2, design=("iid", "constant")[i % 2])
        for _ in range(2):
            _, _, trace = frank_wolfe_single(tree, W, random_plan(4, tree.horizon, W, rng))
            worst_drop = max(worst_drop, -float(np.min(np.diff(trace), initial=0.0)))
    monotone = worst_drop <= 1e-12

    from deepsched.schedulers import GainTree
    tree = GainTree(1, [1.0, 1.0], [2000.0, 2000.0], [0.9, 0.5], [1, 1], [True, True],
                    [0.0, 0.0], TABLE, CH)
    Wg = 3000.0
    res = frank_wolfe(tree, Wg, n_init=5, rng=np.random.default_rng(0))
    a, b = np.meshgrid(np.arange(0, 1.0 + 5e-4, 1e-3), np.arange(0, 1.0 + 5e-4, 1e-3))
    keep = a + b <= 1 + 1e-12
    grid = (2 - an.pfail_given_d_value(a[keep] * Wg, 2000.0, 0.9, **PHYS)
            - an.pfail_given_d_value(b[keep] * Wg, 2000.0, 0.5, **PHYS)).max()
    grid_gap = abs(res.value - grid)

    prefix_ok = True
    for _ in range(5):
        t = random_tree(rng, K=4, T=2)
        starts = [random_plan(4, 2, 4000.0, rng) for _ in range(20)]
        vals = frank_wolfe(t, 4000.0, initial_points=starts).restarts
        best = np.maximum.accumulate(vals)
        one = frank_wolfe(t, 4000.0, initial_points=starts[:1]).value
        prefix_ok &= bool(best[-1] >= one and best[0] == one)
    ok = monotone and grid_gap < 1e-3 and prefix_ok
    record("A5", ok, f"largest objective drop {worst_drop:.1e} over 50 trees; K=2 T=1 grid gap "
                     f"{grid_gap:.1e} (< 1e-3); best-of-20 >= best-of-1: {prefix_ok}")
    assert ok


# -- A6 ----------------------------------------------------------------------------------

def test_a6_network_numerics():
    from conftest import central_diff, rel_err
    from test_networks import _agent, _batch, _inputs

    worst = 0.0
    for csi in ("full", "none"):
        for mode in ("expected", "distributional", "distr_dueling"):
            d, F_ = _agent(csi, mode)
            batch = _batch(F_)
            for module, fn in ((d.critic_, lambda: d.critic_loss(batch)),
                               (d.actor_, lambda: d.actor_loss(batch))):
                module.zero_grad()
                fn().backward()
                num = central_diff(lambda: float(fn().value), module.flat, h=1e-6)
                worst = max(worst, rel_err(module.flat_grad(), num))
    rng = np.random.default_rng(606)
    eq_err = inv_err = simplex_err = duel_err = 0.0
    for F_ in (7, 15):
        feats, mask = _inputs(rng, B=1, K=8, F=F_)
        actor, port = Actor(F_, rng=1), Actor(F_, simplex=True, rng=1)
        critic = Critic(F_, mode="distr_dueling", rng=2)
        act = rng.random((1, 8)) * mask
        out = actor.forward(feats, mask).value[0]
        atoms, mean, _ = critic.forward(feats, act, mask)
        for _ in range(5):
            p = rng.permutation(8)
            eq_err = max(eq_err, np.max(np.abs(actor.forward(feats[:, p], mask[:, p]).value[0] - out[p])))
            a2 = critic.forward(feats[:, p], act[:, p], mask[:, p])[0].value
            inv_err = max(inv_err, np.max(np.abs(a2 - atoms.value)))
        simplex_err = max(simplex_err, abs(port.forward(feats, mask).value.sum() - 1.0))
        duel_err = max(duel_err, abs(atoms.value.mean() - mean.value[0]))
    n_params = max(check_param_budget(Actor(F_), Critic(F_)) for F_ in (7, 15))
    # summation order is fixed, so permutations reproduce outputs up to reassociation
    ok = (worst < 1e-4 and eq_err <= 1e-12 and inv_err <= 1e-12 and simplex_err < 1e-9
          and duel_err < 1e-9 and n_params < 2000)
    record("A6", ok, f"grad rel err {worst:.1e} (< 1e-4); equivariance {eq_err:.0e}, invariance "
                     f"{inv_err:.0e}; simplex {simplex_err:.0e}, dueling mean {duel_err:.0e} (< 1e-9); "
                     f"{n_params} params (< 2000)")
    assert ok


# -- A7 ----------------------------------------------------------------------------------------

def test_a7_quantile_learning():
    rng = np.random.default_rng(707)
    n = 10_000
    comp = rng.random(n) < 0.4
    x = np.where(comp, rng.normal(-2.0, 0.5, n), rng.normal(3.0, 1.0, n))
    taus = quantile_midpoints(50)
    # the pinball loss at the midpoint levels is minimised by the inverted-CDF quantiles
    target = np.quantile(x, taus, method="inverted_cdf")
    critic = Critic(7, mode="distributional", rng=0)
    feats = rng.normal(size=(1, 3, 7))
    mask = np.ones((1, 3), bool)
    act = np.full((1, 3), 0.3)
    opt = Adam(critic, lr=1e-2)
    steps = 20_000
    y = x[None]
    for s in range(steps):
        opt.lr = 1e-2 * 1e-2 ** (s / steps)
        critic.zero_grad()
        quantile_loss(critic.forward(feats, act, mask)[0], y).backward()
        opt.step()
    atoms = critic.forward(feats, act, mask)[0].value[0]
    err = float(np.max(np.abs(atoms - target)))
    ok = err < 0.05
    record("A7", ok, f"max |atom - empirical quantile| {err:.3f} after {steps} steps (< 0.05)")
    assert ok


# -- A8 / A9 -------------------------------------------------------------------------------------

def _a8_env():
    cfg = bench.load_config("table1a")
    return cfg, SchedulingEnv(cfg.scenario.with_(W=1e6, rho=0.5))


def _train_and_eval(spec, env, seed):
    t0 = time.perf_counter()
    sched = bench.make_scheduler(spec, seed).fit(env)
    train = time.perf_counter() - t0
    from deepsched.evaluation import run_episode
    ms = [run_episode(sched, env, bench.episode_seed(seed, e)) for e in range(EVAL_EPISODES)]
    return sched, ms, train


@pytest.fixture(scope="module")
def a8_results():
    cfg, env = _a8_env()
    out = {"gain": {}, "curves": {}, "train_s": []}
    fixed = {
        "knapsack": {"type": "knapsack"},
        "ilp": {"type": "ilp", "horizon": 3},
        "frank_wolfe": {"type": "frank_wolfe", "horizon": 2, "n_init": 5, "design": "best"},
        "random": {"type": "random"},
    }
    for name, spec in fixed.items():
        out["gain"][name] = {s: [m.gain for m in bench.evaluate_scheduler(spec, env, s, EVAL_EPISODES)[0]]
                             for s in SEEDS}
    for csi in ("full", "none"):
        spec = {"type": "deep", "csi": csi, "n_steps": N_STEPS}
        out["gain"][f"deep_{csi}"] = {}
        for s in SEEDS:
            sched, ms, train = _train_and_eval(spec, env, s)
            out["gain"][f"deep_{csi}"][s] = [m.gain for m in ms]
            out["train_s"].append(train)
            if csi == "full":
                # default configuration: distributional + dueling critic, scaled rewards
                out["curves"][s] = bench.eval_rows(sched)
    return out


def _mean(res, name):
    return float(np.mean([g for s in SEEDS for g in res["gain"][name][s]]))


@pytest.mark.slow
def test_a8_end_to_end_benchmark(a8_results):
    m = {k: _mean(a8_results, k) for k in a8_results["gain"]}
    slowest = max(a8_results["train_s"])
    lo, hi = 0.9 * m["knapsack"], m["ilp"]
    # gains are sums of importances; the bound check allows float reassociation only
    full_ok = lo <= m["deep_full"] <= hi * (1 + 1e-12)
    none_vs_fw = m["deep_none"] >= m["frank_wolfe"]
    margin = 1.1 * m["random"]
    none_vs_random = m["deep_none"] >= margin and m["frank_wolfe"] >= margin
    time_ok = slowest < 30 * 60
    ok = full_ok and none_vs_fw and none_vs_random and time_ok
    record("A8", ok,
           f"gain/episode deep_full {m['deep_full']:.2f} in [{lo:.2f}, {hi:.2f}]: {full_ok}; "
           f"deep_none {m['deep_none']:.2f} >= FW {m['frank_wolfe']:.2f}: {none_vs_fw}; "
           f"both >= 1.1 x random {m['random']:.2f} = {margin:.2f}: {none_vs_random}; "
           f"slowest training {slowest / 60:.1f} min")
    assert full_ok, "full-CSI deep scheduler outside [0.9 knapsack, ILP]"
    assert time_ok
    assert none_vs_fw, "no-CSI deep scheduler below Frank-Wolfe"
    assert none_vs_random, "no-CSI schedulers within 10% of the uniform-random baseline"


@pytest.mark.slow
def test_a9_ablation_signal(a8_results):
    _, env = _a8_env()
    wins = []
    detail = []
    for s in SEEDS:
        base = DeepScheduler(csi="full", critic_mode="expected", scale_rewards=False,
                             n_steps=N_STEPS, random_state=s).fit(env)
        t_base = bench.steps_to_fraction(bench.eval_rows(base), 0.9)
        t_full = bench.steps_to_fraction(a8_results["curves"][s], 0.9)
        wins.append(t_full <= t_base)
        detail.append(f"{t_full}/{t_base}")
    ok = sum(wins) >= 4
    record("A9", ok, f"distr_dueling+scaled reaches 90% no later than expected+raw in {sum(wins)}/5 seeds "
                     f"(steps {', '.join(detail)})")
    assert ok


# -- A10 ---------------------------------------------------------------------------------------

def test_a10_scaler_and_exp_rule():
    rng = np.random.default_rng(1010)
    r = rng.uniform(0, 2, 10_000)
    sc = RewardScaler(gamma=0.95)
    ret = np.empty_like(r)
    acc = 0.0
    for t, v in enumerate(r):
        sc(float(v))
        acc = 0.95 * acc + v
        ret[t] = acc
    sc_err = max(abs(sc.stats.mean - ret.mean()), abs(sc.stats.std - ret.std()))

    from test_exp_rule import recompute
    waited = [0.0, 1.0, 4.0, 2.0, 7.0]
    remaining = [2.0, 1.0, 6.0, 8.0, 3.0]
    rate = [1.3, 0.4, 5.2, 2.2, 3.1]
    mean_rate = [1.1, 0.9, 4.0, 2.5, 2.0]
    delta = [0.05, 0.1, 0.05, 0.2, 0.01]
    got = exp_rule_index(ExpRuleState(waited, remaining, rate, mean_rate, delta))
    ref = np.array(recompute(waited, remaining, rate, mean_rate, delta))
    exp_err = float(np.max(np.abs(got - ref) / np.abs(ref)))
    ok = sc_err < 1e-9 and exp_err < 1e-12
    record("A10", ok, f"scaler vs batch {sc_err:.1e} over 1e4 pushes (< 1e-9); exp-rule fixture "
                      f"rel err {exp_err:.1e} (< 1e-12)")
    assert ok

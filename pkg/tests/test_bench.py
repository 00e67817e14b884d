import csv
import math

import numpy as np
import pytest
from scipy import stats

from deepsched import bench
from deepsched.exceptions import ConfigurationError


def small_config(tmp_path, schedulers, **exp):
    raw = {
        "name": "small",
        "scenario": {
            "K": 4, "W": 2.0e5, "n_slots": 20,
            "classes": [
                {"data_size": 2000, "latency": 2, "importance": 1, "arrival_prob": 0.3},
                {"data_size": 16000, "latency": 10, "importance": 1, "arrival_prob": 0.2},
            ],
            "channel": {"rho": 0.5, "pathloss_db": 120.9, "noise_psd_dbm_hz": -149},
        },
        "experiment": {"schedulers": schedulers, "episodes": 1, "seeds": [0],
                       "output_dir": str(tmp_path), **exp},
    }
    return bench.load_config(raw)


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# -- configuration ---------------------------------------------------------------

@pytest.mark.parametrize("name", bench.PACKAGED)
def test_packaged_scenarios_load(name):
    cfg = bench.load_config(name)
    assert cfg.name == name and cfg.schedulers
    assert all(s["type"] in bench.SCHEDULER_TYPES for s in cfg.schedulers)


def test_unit_conversions():
    ch = bench.channel_from_dict({"pathloss_db": 120.9, "noise_psd_dbm_hz": -149})
    assert ch.C_pl == pytest.approx(10 ** -12.09)
    assert ch.noise_psd == pytest.approx(10 ** -14.9 * 1e-3)
    with pytest.raises(ConfigurationError):
        bench.channel_from_dict({"pathlos_db": 1.0})


def test_config_errors(tmp_path):
    with pytest.raises(ConfigurationError):
        bench.load_config("no_such_scenario")
    with pytest.raises(ConfigurationError):
        small_config(tmp_path, [{"type": "oracle9000"}])
    with pytest.raises(ConfigurationError):
        bench.load_config({"scenario": {"K": 2}})


def test_overrides_and_sweep_points(tmp_path):
    cfg = bench.load_config("table1a", seeds=[7], output_dir=str(tmp_path), episodes=None)
    assert cfg.seeds == [7] and cfg.episodes == 5
    assert len(cfg.sweep_points()) == 9


def test_labels_and_fw_designs():
    assert bench.scheduler_label({"type": "deep", "csi": "none"}) == "deep_none"
    assert bench.scheduler_label({"type": "ilp", "name": "oracle"}) == "oracle"
    spec = {"type": "frank_wolfe", "design": "best"}
    assert bench._fw_designs(spec, 0.0) == ("iid",)
    assert bench._fw_designs(spec, 1.0) == ("constant",)
    assert bench._fw_designs(spec, 0.5) == ("iid", "constant")
    assert bench.make_scheduler(spec, 3).random_state == 3


def test_episode_seeds_are_distinct():
    seeds = {bench.episode_seed(s, e) for s in range(5) for e in range(20)}
    assert len(seeds) == 100
    assert bench.episode_seed(1, 2) == bench.episode_seed(1, 2)


# -- runs ---------------------------------------------------------------------------

def test_single_scheduler_single_row(tmp_path):
    cfg = small_config(tmp_path, [{"type": "knapsack"}])
    res = bench.run_experiment(cfg)
    rows = read_csv(res.paths["metrics"])
    assert len(rows) == 1 and rows[0]["scheduler"] == "knapsack"
    assert res.violations == []
    assert (tmp_path / "sat_vs_rho.csv").exists() and (tmp_path / "sat_vs_W.csv").exists()


def test_abundant_bandwidth_full_satisfaction(tmp_path):
    cfg = small_config(tmp_path, [{"type": "knapsack"}, {"type": "exp_rule"}],
                       W_sweep=[1e9], episodes=2)
    res = bench.run_experiment(cfg)
    for r in res.rows:
        assert r["satisfaction"] == 1.0


def test_ilp_not_worse_than_knapsack_per_point(tmp_path):
    cfg = small_config(tmp_path, [{"type": "knapsack"}, {"type": "ilp", "horizon": 3}],
                       W_sweep=[3e4, 1e5], seeds=[0, 1], episodes=2)
    res = bench.run_experiment(cfg)
    by = {(r["scheduler"], r["W"], r["seed"]): r["gain"] for r in res.rows}
    for W in (3e4, 1e5):
        for s in (0, 1):
            assert by[("ilp", W, s)] >= by[("knapsack", W, s)] - 1e-9


def test_paired_episodes_across_schedulers(tmp_path):
    # departures are exogenous, so paired runs see identical user populations
    cfg = small_config(tmp_path, [{"type": "knapsack"}, {"type": "random"}], episodes=3)
    res = bench.run_experiment(cfg)
    a, b = res.rows
    assert a["departed_class1"] == b["departed_class1"]
    assert a["departed_class2"] == b["departed_class2"]


def test_failures_recorded_and_others_continue(tmp_path):
    cfg = small_config(tmp_path, [{"type": "knapsack", "mode": "nonsense"}, {"type": "random"}])
    res = bench.run_experiment(cfg)
    rows = read_csv(res.paths["metrics"])
    assert rows[0]["error"] and not rows[1]["error"]
    assert len(res.violations) == 1


def test_rerun_is_byte_stable(tmp_path):
    specs = [{"type": "knapsack"}, {"type": "random"}, {"type": "exp_rule"}]
    cfg = small_config(tmp_path, specs, episodes=2, seeds=[0, 1])
    p = bench.run_experiment(cfg).paths["metrics"]
    first = [{k: v for k, v in r.items() if k not in ("wall_s", "train_s")} for r in read_csv(p)]
    p = bench.run_experiment(cfg).paths["metrics"]
    second = [{k: v for k, v in r.items() if k not in ("wall_s", "train_s")} for r in read_csv(p)]
    assert first == second


def test_parallel_matches_serial(tmp_path):
    specs = [{"type": "knapsack"}, {"type": "random"}]
    serial = bench.run_experiment(small_config(tmp_path / "a", specs, seeds=[0, 1])).rows
    par = bench.run_experiment(small_config(tmp_path / "b", specs, seeds=[0, 1]), n_jobs=2).rows
    strip = lambda rs: [(r["scheduler"], r["seed"], r["gain"]) for r in rs]
    assert strip(serial) == strip(par)


def test_trace_driven_run(tmp_path):
    cfg = small_config(tmp_path, [{"type": "knapsack"}])
    cfg.traces = {"synthetic_files_per_mode": 1, "synthetic_seconds": 30}
    res = bench.run_experiment(cfg)
    assert res.violations == []
    assert any((tmp_path / "traces").iterdir())


def test_gain_bound_violation_detected():
    cfg = bench.load_config("table1a")
    bad = bench.check_row({"scheduler": "x", "gain_per_slot": 11.0, "satisfaction": 1.2},
                          cfg.scenario)
    assert len(bad) == 2


# -- ablation -----------------------------------------------------------------------------

def test_ablation_rows_and_mean(tmp_path):
    cfg = small_config(tmp_path, [])
    cfg.ablation = {"modes": ["expected"], "rewards": ["raw"], "eval_every": 25,
                    "eval_episodes": 1}
    paths = bench.run_ablation(cfg, n_steps=100, seeds=[0, 1])
    per = [read_csv(paths[f"full_expected_raw_seed{s}"]) for s in (0, 1)]
    assert len(per[0]) == 100 // 25
    mean = read_csv(paths["full_expected_raw_mean"])
    assert len(mean) == len(per[0])
    for i, r in enumerate(mean):
        ref = np.mean([float(p[i]["gain_per_slot"]) for p in per])
        assert float(r["gain_per_slot"]) == pytest.approx(ref, abs=1e-12)
    assert (tmp_path / "ablation" / "full_expected_raw_seed0_train.csv").exists()


def test_steps_to_fraction():
    rows = [{"step": 10, "g": 0.1}, {"step": 20, "g": 0.95}, {"step": 30, "g": 1.0}]
    assert bench.steps_to_fraction(rows, 0.9, key="g") == 20
    assert bench.steps_to_fraction([], 0.9) is None


# -- summaries --------------------------------------------------------------------------

def test_summarize_empty_dir(tmp_path):
    assert bench.summarize(tmp_path) == []


def _fake_metrics(path, name, values):
    rows = [{"scheduler": name, "W": 1e6, "rho": 0.5, "seed": s, "rate_mbps": 1.0,
             "satisfaction": 0.5, "gain_per_slot": v, "error": ""} for s, v in enumerate(values)]
    bench._write_csv(path, rows)


def test_identical_files_have_zero_difference(tmp_path):
    _fake_metrics(tmp_path / "a.csv", "knapsack", [1.0, 2.0, 3.0])
    _fake_metrics(tmp_path / "b.csv", "knapsack", [1.0, 2.0, 3.0])
    table = bench.summarize(tmp_path, reference="knapsack@a")
    other = [r for r in table if r["scheduler"] == "knapsack@b"][0]
    assert other["diff_mean"] == 0.0 and other["ci_low"] == 0.0 and other["ci_high"] == 0.0


def test_paired_interval_independent_recomputation(tmp_path):
    base = [1.0, 1.5, 0.7, 2.2, 1.1]
    alt = [1.3, 1.4, 1.0, 2.9, 1.2]
    _fake_metrics(tmp_path / "a.csv", "ref", base)
    _fake_metrics(tmp_path / "b.csv", "alt", alt)
    row = [r for r in bench.summarize(tmp_path, reference="ref") if r["scheduler"] == "alt"][0]
    d = np.subtract(alt, base)
    lo, hi = stats.t.interval(0.95, len(d) - 1, loc=d.mean(), scale=stats.sem(d))
    assert row["diff_mean"] == pytest.approx(d.mean(), abs=1e-12)
    assert row["ci_low"] == pytest.approx(lo, abs=1e-12)
    assert row["ci_high"] == pytest.approx(hi, abs=1e-12)
    assert row["gaps"] == ""
    assert "alt" in bench.format_table(bench.summarize(tmp_path, reference="ref"))


def test_missing_seeds_flagged(tmp_path):
    _fake_metrics(tmp_path / "a.csv", "ref", [1.0, 2.0])
    _fake_metrics(tmp_path / "b.csv", "alt", [1.0, 2.0, 3.0])
    row = [r for r in bench.summarize(tmp_path, reference="ref") if r["scheduler"] == "alt"][0]
    assert row["gaps"] == "seed 2"
    with pytest.raises(ConfigurationError):
        bench.summarize(tmp_path, reference="nobody")


def test_single_seed_interval_is_nan():
    m, lo, hi = bench.paired_ci([0.4])
    assert m == 0.4 and math.isnan(lo) and math.isnan(hi)

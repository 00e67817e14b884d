"""Paired-seed experiment runner, ablations and result summaries.

Every scheduler of an experiment sees the same episodes: the environment seed
of episode ``e`` under run seed ``s`` depends only on ``(s, e)``.
"""
from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import yaml
from scipy import stats

from .deep import DeepScheduler
from .env import ChannelParams, Scenario, SchedulingEnv, ServiceClass
from .evaluation import EpisodeMetrics, run_episode
from .exceptions import ConfigurationError
from .schedulers import (ExpRuleScheduler, FrankWolfeScheduler, MyopicKnapsackScheduler,
                         OracleILPScheduler, RandomScheduler)

log = logging.getLogger(__name__)

SCHEDULER_TYPES = {
    "knapsack": MyopicKnapsackScheduler,
    "ilp": OracleILPScheduler,
    "frank_wolfe": FrankWolfeScheduler,
    "exp_rule": ExpRuleScheduler,
    "random": RandomScheduler,
    "deep": DeepScheduler,
}

PACKAGED = ("table1a", "table1b", "table2")


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def channel_from_dict(d: dict) -> ChannelParams:
    d = dict(d or {})
    kw = {}
    if "pathloss_db" in d:
        kw["C_pl"] = 10.0 ** (-float(d.pop("pathloss_db")) / 10.0)
    if "noise_psd_dbm_hz" in d:
        kw["noise_psd"] = 10.0 ** (float(d.pop("noise_psd_dbm_hz")) / 10.0) * 1e-3
    if "doppler_hz" in d:
        from .env import doppler_rho
        kw["rho"] = doppler_rho(float(d.pop("doppler_hz")), float(d.pop("doppler_slot_s", 1e-3)))
    for k in ("rho", "C_pl", "n_pl", "noise_psd", "power", "d_min", "d_max", "slot_duration"):
        if k in d:
            kw[k] = float(d.pop(k))
    if d:
        raise ConfigurationError(f"unknown channel keys {sorted(d)}")
    return ChannelParams(**kw)


def scenario_from_dict(d: dict, name: str = "") -> Scenario:
    try:
        classes = [ServiceClass(float(c["data_size"]), int(c["latency"]), float(c["importance"]),
                                float(c["arrival_prob"]), str(c.get("name", "")))
                   for c in d["classes"]]
        return Scenario(classes, K=int(d["K"]), W=float(d["W"]),
                        channel=channel_from_dict(d.get("channel")),
                        n_slots=int(d.get("n_slots", 100)), seed=int(d.get("seed", 0)),
                        null_latency=int(d.get("null_latency", 1)), name=name)
    except KeyError as e:
        raise ConfigurationError(f"scenario is missing {e}") from None


@dataclass
class ExperimentConfig:
    """Everything one ``run`` needs.

    ``W_sweep``/``rho_sweep`` of ``None`` keep the scenario value. Each
    scheduler entry is a dict with ``type`` plus constructor parameters and an
    optional display ``name``.
    """

    name: str
    scenario: Scenario
    schedulers: List[dict]
    W_sweep: Optional[List[float]] = None
    rho_sweep: Optional[List[float]] = None
    episodes: int = 5
    seeds: List[int] = field(default_factory=lambda: [0])
    output_dir: str = "results"
    traces: Optional[dict] = None
    ablation: Optional[dict] = None

    def sweep_points(self):
        Ws = self.W_sweep or [self.scenario.W]
        rhos = self.rho_sweep or [None]
        return [(float(W), None if r is None else float(r)) for W in Ws for r in rhos]


def load_config(source, **overrides) -> ExperimentConfig:
    """Read a YAML experiment; ``source`` is a path or a packaged name."""
    if isinstance(source, dict):
        raw = source
    else:
        p = Path(str(source))
        if p.exists():
            text = p.read_text()
        elif str(source) in PACKAGED:
            text = resources.files("deepsched.scenarios").joinpath(f"{source}.yaml").read_text()
        else:
            raise ConfigurationError(f"no config file or packaged scenario named {source!r}")
        raw = yaml.safe_load(text)
    name = raw.get("name", "experiment")
    exp = dict(raw.get("experiment") or {})
    cfg = ExperimentConfig(
        name=name,
        scenario=scenario_from_dict(raw["scenario"], name),
        schedulers=list(exp.get("schedulers") or []),
        W_sweep=exp.get("W_sweep"), rho_sweep=exp.get("rho_sweep"),
        episodes=int(exp.get("episodes", 5)), seeds=list(exp.get("seeds", [0])),
        output_dir=exp.get("output_dir", "results"),
        traces=raw.get("traces"), ablation=raw.get("ablation"))
    for k, v in overrides.items():
        if v is not None:
            setattr(cfg, k, v)
    for s in cfg.schedulers:
        if s.get("type") not in SCHEDULER_TYPES:
            raise ConfigurationError(f"unknown scheduler type {s.get('type')!r}")
    if cfg.episodes < 1 or not cfg.seeds:
        raise ConfigurationError("need at least one episode and one seed")
    return cfg


def episode_seed(seed: int, episode: int) -> int:
    """Environment seed shared by all schedulers for ``(seed, episode)``."""
    return int(np.random.SeedSequence([int(seed), int(episode)]).generate_state(1)[0])


def scheduler_label(spec: dict) -> str:
    if spec.get("name"):
        return str(spec["name"])
    t = spec["type"]
    if t == "deep":
        return f"deep_{spec.get('csi', 'full')}"
    return t


def make_scheduler(spec: dict, seed: int = 0):
    params = {k: v for k, v in spec.items() if k not in ("type", "name")}
    cls = SCHEDULER_TYPES[spec["type"]]
    if spec["type"] == "frank_wolfe" and params.get("design") == "best":
        params.pop("design")
    if "random_state" in cls().get_params() and "random_state" not in params:
        params["random_state"] = seed
    return cls(**params)


def build_env(cfg: ExperimentConfig, scenario: Scenario) -> SchedulingEnv:
    factory = None
    if cfg.traces:
        factory = trace_source(cfg)
    return SchedulingEnv(scenario, user_factory=factory)


def trace_source(cfg: ExperimentConfig):
    from .traces import TraceUserSource, write_synthetic_traces

    t = dict(cfg.traces)
    directory = t.get("directory")
    if not directory:
        directory = Path(cfg.output_dir) / "traces"
        if not directory.exists() or not any(directory.iterdir()):
            write_synthetic_traces(directory, int(t.get("synthetic_files_per_mode", 2)),
                                   int(t.get("synthetic_seconds", 300)), seed=0)
    return TraceUserSource(directory, cfg.scenario.channel, W_meas=float(t.get("W_meas", 15e6)),
                           block=float(t.get("block", 200e3)),
                           slot_duration_s=float(t.get("slot_duration_s", 1e-3)),
                           carrier_freq=float(t.get("carrier_freq", 1.8e9)),
                           modes=t.get("modes"))


# ---------------------------------------------------------------------------
# running
# ---------------------------------------------------------------------------

def _fw_designs(spec: dict, rho: float) -> Sequence[str]:
    design = spec.get("design", "auto")
    if design != "best":
        return (design,)
    if rho <= 0.0:
        return ("iid",)
    if rho >= 1.0:
        return ("constant",)
    return ("iid", "constant")


def evaluate_scheduler(spec: dict, env: SchedulingEnv, seed: int, episodes: int):
    """Fit and roll out one scheduler on the paired episodes of ``seed``.

    Returns ``(metrics list, train seconds, note)``. Frank-Wolfe with
    ``design: best`` runs each design and keeps the better episode.
    """
    t0 = time.perf_counter()
    note = ""
    if spec["type"] == "frank_wolfe":
        designs = _fw_designs(spec, env.scenario.channel.rho)
        per = {}
        for d in designs:
            s = make_scheduler({**spec, "design": d}, seed).fit(env)
            per[d] = [run_episode(s, env, episode_seed(seed, e)) for e in range(episodes)]
        out, picks = [], []
        for e in range(episodes):
            best = max(designs, key=lambda d: per[d][e].gain)
            out.append(per[best][e])
            picks.append(best)
        note = "designs=" + "/".join(picks) if len(designs) > 1 else ""
        return out, 0.0, note
    sched = make_scheduler(spec, seed)
    sched.fit(env)
    train = time.perf_counter() - t0
    return [run_episode(sched, env, episode_seed(seed, e)) for e in range(episodes)], train, note


def aggregate(ms: Sequence[EpisodeMetrics]) -> dict:
    sat = np.sum([m.satisfied for m in ms], axis=0)
    dep = np.sum([m.departed for m in ms], axis=0)
    n = sum(m.n_slots for m in ms)
    row = {"episodes": len(ms), "gain": float(sum(m.gain for m in ms)),
           "gain_per_slot": float(sum(m.gain for m in ms) / n) if n else 0.0,
           "satisfaction": float(sat.sum() / dep.sum()) if dep.sum() else float("nan"),
           "rate_mbps": float(sum(m.delivered_bits for m in ms) / sum(m.sim_seconds for m in ms) / 1e6),
           "wall_s": float(sum(m.wall_seconds for m in ms))}
    for c in range(len(sat)):
        row[f"sat_class{c + 1}"] = float(sat[c] / dep[c]) if dep[c] else float("nan")
        row[f"departed_class{c + 1}"] = int(dep[c])
    return row


def check_row(row: dict, scenario: Scenario) -> List[str]:
    """Invariant violations in one metrics row."""
    bad = []
    for k, v in row.items():
        if k.startswith("sat") and isinstance(v, float) and not math.isnan(v) and not 0 <= v <= 1:
            bad.append(f"{k}={v} outside [0, 1]")
    bound = scenario.K * max(c.importance for c in scenario.classes)
    if row.get("gain_per_slot", 0.0) > bound + 1e-9:
        bad.append(f"gain per slot {row['gain_per_slot']} above the importance bound {bound}")
    if row.get("error"):
        bad.append(f"{row['scheduler']}: {row['error']}")
    return bad


METRIC_FIELDS = ["scheduler", "W", "rho", "seed", "episodes", "gain", "gain_per_slot",
                 "satisfaction", "rate_mbps", "wall_s", "train_s", "note", "error"]


def _write_csv(path: Path, rows: List[dict], first=()):
    keys = list(first)
    for r in rows:
        keys += [k for k in r if k not in keys]
    with open(path, "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=keys, restval="")
        wr.writeheader()
        for r in rows:
            wr.writerow({k: _fmt(v) for k, v in r.items()})
    return path


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


@dataclass
class RunResult:
    rows: List[dict]
    violations: List[str]
    paths: Dict[str, Path]


def _run_cell(cfg: ExperimentConfig, W: float, rho, seed: int, specs: List[dict]):
    sc = cfg.scenario.with_(W=W) if rho is None else cfg.scenario.with_(W=W, rho=rho)
    env = build_env(cfg, sc)
    rows, violations = [], []
    for spec in specs:
        label = scheduler_label(spec)
        row = {"scheduler": label, "W": W, "rho": sc.channel.rho, "seed": seed}
        try:
            ms, train, note = evaluate_scheduler(spec, env, seed, cfg.episodes)
            row.update(aggregate(ms))
            row["train_s"] = train
            row["note"] = note
            row["error"] = ""
        except Exception as exc:  # noqa: BLE001 - recorded, others continue
            log.exception("scheduler %s failed", label)
            row["error"] = f"{type(exc).__name__}: {exc}"
        violations += check_row(row, sc)
        rows.append(row)
        log.info("%s W=%g rho=%.2f seed=%d gain/slot=%s", label, W, sc.channel.rho,
                 seed, row.get("gain_per_slot"))
    return rows, violations


def run_experiment(cfg: ExperimentConfig, only: Optional[Sequence[str]] = None,
                   n_jobs: int = 1) -> RunResult:
    """Run every scheduler on every sweep point and seed; write CSV artifacts.

    Cells ``(sweep point, seed)`` are independent; ``n_jobs > 1`` farms them
    out to worker processes. Row order does not depend on ``n_jobs``.
    """
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    specs = [s for s in cfg.schedulers if only is None or scheduler_label(s) in only]
    if cfg.traces:
        trace_source(cfg)  # generate synthetic traces once, before any worker starts
    cells = [(W, rho, seed) for W, rho in cfg.sweep_points() for seed in cfg.seeds]
    if n_jobs > 1 and len(cells) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(n_jobs) as ex:
            results = list(ex.map(_run_cell, *zip(*[(cfg, W, r, s, specs) for W, r, s in cells])))
    else:
        results = [_run_cell(cfg, W, r, s, specs) for W, r, s in cells]
    rows = [r for rs, _ in results for r in rs]
    violations = [v for _, vs in results for v in vs]
    paths = {"metrics": _write_csv(out / "metrics.csv", rows, METRIC_FIELDS)}
    paths.update(write_plot_data(rows, out))
    return RunResult(rows, violations, paths)


def write_plot_data(rows: List[dict], out: Path) -> Dict[str, Path]:
    """Seed-averaged satisfaction against rho and against W."""
    ok = [r for r in rows if not r.get("error")]
    cls = sorted({k for r in ok for k in r if k.startswith("sat_class")})
    paths = {}
    for axis, other, fname in (("rho", "W", "sat_vs_rho.csv"), ("W", "rho", "sat_vs_W.csv")):
        groups: Dict[tuple, List[dict]] = {}
        for r in ok:
            groups.setdefault((r["scheduler"], r[other], r[axis]), []).append(r)
        table = []
        for (name, o, x), rs in sorted(groups.items(), key=lambda kv: (kv[0][0], kv[0][1], kv[0][2])):
            rec = {"scheduler": name, other: o, axis: x, "n_seeds": len(rs),
                   "satisfaction": _nanmean([r["satisfaction"] for r in rs]),
                   "gain_per_slot": _nanmean([r["gain_per_slot"] for r in rs])}
            for c in cls:
                rec[c] = _nanmean([r.get(c, float("nan")) for r in rs])
            table.append(rec)
        paths[fname] = _write_csv(out / fname, table)
    return paths


def _nanmean(xs):
    xs = np.asarray([float(x) for x in xs], float)
    xs = xs[~np.isnan(xs)]
    return float(xs.mean()) if xs.size else float("nan")


# ---------------------------------------------------------------------------
# ablation
# ---------------------------------------------------------------------------

def run_ablation(cfg: ExperimentConfig, n_steps: Optional[int] = None,
                 seeds: Optional[Sequence[int]] = None) -> Dict[str, Path]:
    """Train every (critic mode, reward option) on each seed; emit curve CSVs.

    Per-seed files hold one row per evaluation epoch; ``*_mean.csv`` is their
    pointwise average.
    """
    ab = dict(cfg.ablation or {})
    modes = ab.get("modes", ["expected", "distributional", "distr_dueling"])
    rewards = ab.get("rewards", ["raw", "scaled"])
    seeds = list(seeds if seeds is not None else ab.get("seeds", [0]))
    steps = int(n_steps if n_steps is not None else ab.get("n_steps", 50_000))
    out = Path(cfg.output_dir) / "ablation"
    out.mkdir(parents=True, exist_ok=True)
    env = build_env(cfg, cfg.scenario)
    paths = {}
    for mode in modes:
        for rw in rewards:
            tag = f"{ab.get('csi', 'full')}_{mode}_{rw}"
            curves = []
            for s in seeds:
                d = DeepScheduler(csi=ab.get("csi", "full"), critic_mode=mode,
                                  scale_rewards=rw == "scaled", n_steps=steps,
                                  eval_every=min(int(ab.get("eval_every", steps)), max(steps // 4, 1)),
                                  eval_episodes=int(ab.get("eval_episodes", 2)),
                                  hidden=int(ab.get("hidden", 10)), random_state=s,
                                  curve_path=str(out / f"{tag}_seed{s}_train.csv"))
                d.fit(env)
                rows = eval_rows(d)
                curves.append(rows)
                paths[f"{tag}_seed{s}"] = _write_csv(out / f"{tag}_seed{s}.csv", rows)
            paths[f"{tag}_mean"] = _write_csv(out / f"{tag}_mean.csv", mean_curve(curves))
    return paths


def eval_rows(d: DeepScheduler) -> List[dict]:
    rows = []
    for r in d.curves_:
        g = r.get("eval_gain_per_slot")
        if g is None or (isinstance(g, float) and math.isnan(g)):
            continue
        rec = {"epoch": len(rows), "step": r["step"], "gain_per_slot": g}
        rec.update({k[5:]: v for k, v in r.items() if k.startswith("eval_sat_class")})
        rows.append(rec)
    return rows


def mean_curve(curves: Sequence[List[dict]]) -> List[dict]:
    n = min((len(c) for c in curves), default=0)
    out = []
    for i in range(n):
        pts = [c[i] for c in curves]
        rec = {"epoch": i, "step": pts[0]["step"], "n_seeds": len(pts)}
        for k in pts[0]:
            if k not in ("epoch", "step"):
                rec[k] = _nanmean([p.get(k, float("nan")) for p in pts])
        out.append(rec)
    return out


def steps_to_fraction(rows: Sequence[dict], frac: float = 0.9, key: str = "gain_per_slot"):
    """First evaluation step at which ``key`` reaches ``frac`` of its final value."""
    if not rows:
        return None
    final = float(rows[-1][key])
    for r in rows:
        if float(r[key]) >= frac * final:
            return int(r["step"])
    return int(rows[-1]["step"])


# ---------------------------------------------------------------------------
# summaries
# ---------------------------------------------------------------------------

def read_metrics(metrics_dir) -> List[dict]:
    """All rows of ``*.csv`` metric files under ``metrics_dir`` (non-recursive).

    When a scheduler name occurs in several files it is suffixed with
    ``@<file stem>`` so the runs stay distinguishable.
    """
    files = sorted(p for p in Path(metrics_dir).glob("*.csv")
                   if p.name not in ("sat_vs_rho.csv", "sat_vs_W.csv", "summary.csv"))
    per_file = []
    for p in files:
        with open(p, newline="") as fh:
            rows = [r for r in csv.DictReader(fh) if "scheduler" in r and "seed" in r]
        if rows:
            per_file.append((p.stem, rows))
    owners: Dict[str, set] = {}
    for stem, rows in per_file:
        for r in rows:
            owners.setdefault(r["scheduler"], set()).add(stem)
    out = []
    for stem, rows in per_file:
        for r in rows:
            r = dict(r)
            if len(owners[r["scheduler"]]) > 1:
                r["scheduler"] = f"{r['scheduler']}@{stem}"
            out.append(r)
    return out


def paired_ci(diffs, level: float = 0.95):
    """Mean and two-sided t interval of paired differences."""
    d = np.asarray(diffs, float)
    n = d.size
    if n == 0:
        return float("nan"), float("nan"), float("nan")
    m = float(d.mean())
    if n == 1:
        return m, float("nan"), float("nan")
    half = float(stats.t.ppf(0.5 + level / 2, n - 1) * d.std(ddof=1) / math.sqrt(n))
    return m, m - half, m + half


def summarize(metrics_dir, reference: Optional[str] = None, metric: str = "gain_per_slot",
              level: float = 0.95) -> List[dict]:
    """Scheduler x sweep point table with paired-difference intervals.

    Differences are ``scheduler - reference`` over the seeds both ran; a
    ``gaps`` column lists seeds missing for one side or failed runs.
    """
    rows = read_metrics(metrics_dir)
    if not rows:
        return []
    names = list(dict.fromkeys(r["scheduler"] for r in rows))
    ref = reference if reference is not None else names[0]
    if ref not in names:
        raise ConfigurationError(f"reference scheduler {ref!r} not in metrics")
    cell: Dict[tuple, Dict[str, dict]] = {}
    for r in rows:
        cell.setdefault((r["scheduler"], r["W"], r["rho"]), {})[r["seed"]] = r
    points = list(dict.fromkeys((r["W"], r["rho"]) for r in rows))
    table = []
    for name in names:
        for W, rho in points:
            mine = cell.get((name, W, rho))
            if mine is None:
                table.append({"scheduler": name, "W": W, "rho": rho, "gaps": "missing"})
                continue
            theirs = cell.get((ref, W, rho), {})
            good = {s: r for s, r in mine.items() if not r.get("error")}
            rec = {"scheduler": name, "W": W, "rho": rho, "n_seeds": len(good),
                   "rate_mbps": _nanmean([r["rate_mbps"] for r in good.values()]),
                   "satisfaction": _nanmean([r["satisfaction"] for r in good.values()]),
                   metric: _nanmean([r[metric] for r in good.values()])}
            shared = sorted(s for s in good if s in theirs and not theirs[s].get("error"))
            diffs = [float(good[s][metric]) - float(theirs[s][metric]) for s in shared]
            rec["ref"] = ref
            rec["diff_mean"], rec["ci_low"], rec["ci_high"] = paired_ci(diffs, level)
            gaps = sorted(set(mine) - set(shared))
            rec["gaps"] = ";".join(f"seed {s}" for s in gaps)
            table.append(rec)
    return table


def format_table(table: List[dict], metric: str = "gain_per_slot") -> str:
    """Plain-text "rate / satisfaction" grid, one line per scheduler and point."""
    lines = [f"{'scheduler':<24}{'W':>12}{'rho':>6}  {'Mbps/sat':<18}{metric:>14}  paired diff [CI]"]
    for r in table:
        if r.get("gaps") == "missing":
            lines.append(f"{r['scheduler']:<24}{float(r['W']):>12.4g}{float(r['rho']):>6.2f}  (missing)")
            continue
        cell = f"{r['rate_mbps']:.3g}/{100 * r['satisfaction']:.1f}%"
        ci = f"{r['diff_mean']:+.4g} [{r['ci_low']:+.4g}, {r['ci_high']:+.4g}]"
        flag = f"  gaps: {r['gaps']}" if r.get("gaps") else ""
        lines.append(f"{r['scheduler']:<24}{float(r['W']):>12.4g}{float(r['rho']):>6.2f}  "
                     f"{cell:<18}{r[metric]:>14.5g}  {ci}{flag}")
    return "\n".join(lines)

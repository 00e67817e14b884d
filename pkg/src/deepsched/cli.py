"""Command-line entry point: ``deepsched {run, ablation, summarize, trace-gen}``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import bench
from .exceptions import ConfigurationError


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", "-c", default="table1a",
                   help="YAML file or packaged scenario (table1a, table1b, table2)")
    p.add_argument("--seeds", type=int, nargs="+", help="override the seed list")
    p.add_argument("--out", "-o", help="output directory")
    p.add_argument("--traces", help="directory of trace files (trace-driven scenarios)")


def _load(args):
    cfg = bench.load_config(args.config, seeds=args.seeds, output_dir=args.out)
    if args.traces:
        cfg.traces = {**(cfg.traces or {}), "directory": args.traces}
    if getattr(args, "episodes", None):
        cfg.episodes = args.episodes
    return cfg


def cmd_run(args) -> int:
    cfg = _load(args)
    if args.steps is not None:
        for s in cfg.schedulers:
            if s["type"] == "deep":
                s["n_steps"] = args.steps
    res = bench.run_experiment(cfg, only=args.schedulers, n_jobs=args.jobs)
    print(f"wrote {len(res.rows)} rows to {res.paths['metrics']}")
    for v in res.violations:
        print(f"violation: {v}", file=sys.stderr)
    return 1 if res.violations else 0


def cmd_ablation(args) -> int:
    cfg = _load(args)
    paths = bench.run_ablation(cfg, n_steps=args.steps, seeds=args.seeds)
    for k, p in paths.items():
        if k.endswith("_mean"):
            print(p)
    return 0


def cmd_summarize(args) -> int:
    d = Path(args.metrics_dir)
    if not d.is_dir():
        print(f"{d} is not a directory", file=sys.stderr)
        return 2
    table = bench.summarize(d, reference=args.reference, metric=args.metric)
    if not table:
        print(f"no metrics rows under {d}", file=sys.stderr)
        return 1
    print(bench.format_table(table, args.metric))
    if args.csv:
        bench._write_csv(Path(args.csv), table)
    return 1 if any(r.get("gaps") for r in table) and args.strict else 0


def cmd_trace_gen(args) -> int:
    from .traces import TRANSPORT_MODES, write_synthetic_traces

    paths = write_synthetic_traces(args.out, args.files, args.seconds,
                                   modes=args.modes or TRANSPORT_MODES, seed=args.seed)
    print(f"wrote {len(paths)} trace files to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="deepsched", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="paired-seed comparison of all configured schedulers")
    _common(p)
    p.add_argument("--episodes", type=int, help="evaluation episodes per seed")
    p.add_argument("--schedulers", nargs="+", help="only run these scheduler labels")
    p.add_argument("--steps", type=int, help="training steps of deep schedulers")
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("ablation", help="critic-mode x reward-scaling learning curves")
    _common(p)
    p.add_argument("--steps", type=int, help="training steps per run")
    p.set_defaults(func=cmd_ablation)

    p = sub.add_parser("summarize", help="rate/satisfaction table with paired intervals")
    p.add_argument("metrics_dir")
    p.add_argument("--reference", help="scheduler the differences are taken against")
    p.add_argument("--metric", default="gain_per_slot")
    p.add_argument("--csv", help="also write the table here")
    p.add_argument("--strict", action="store_true", help="nonzero exit when gaps are flagged")
    p.set_defaults(func=cmd_summarize)

    p = sub.add_parser("trace-gen", help="write synthetic throughput/GPS traces")
    p.add_argument("--out", "-o", required=True)
    p.add_argument("--files", type=int, default=1, help="files per transport mode")
    p.add_argument("--seconds", type=int, default=120)
    p.add_argument("--modes", nargs="+")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_trace_gen)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigurationError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

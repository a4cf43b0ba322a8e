"""Command line entry point: ``balloonpop run | compare | replay``.

Exit codes: 0 success, 1 replay mismatch, 2 configuration or usage error,
3 unreadable or corrupt trace. Log verbosity comes from ``BALLOONPOP_LOG``
(a standard level name, default WARNING).
"""
from __future__ import annotations

import argparse
import logging
import os
import statistics
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import config as cfgmod
from . import records, simulator

log = logging.getLogger("balloonpop")

EXIT_OK = 0
EXIT_MISMATCH = 1
EXIT_CONFIG = 2
EXIT_TRACE = 3

AXES = {"metric": ("ray", "ground"), "strategy": ("DIRECT", "STAR")}

COMPARE_COLUMNS = (
    "axis", "variant", "seed", "n_balloons", "popped", "duration", "attempts", "reattempts",
    "geofence_violations", "distance_flown", "confirmed_per_balloon", "hypotheses_per_balloon",
    "max_confirmed_per_balloon", "end_reason",
)
# columns averaged into the per-variant "mean" row
_MEAN_COLUMNS = COMPARE_COLUMNS[3:-1]


def _setup_logging() -> None:
    level = os.environ.get("BALLOONPOP_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def _load(args) -> cfgmod.ScenarioConfig:
    cfg = cfgmod.load(args.config)
    over = {}
    if getattr(args, "strategy", None):
        over["mission__strategy"] = args.strategy
    if getattr(args, "metric", None):
        over["filter__metric"] = args.metric
    if getattr(args, "time_limit", None) is not None:
        over["sim__time_limit"] = args.time_limit
    return cfgmod.override(cfg, **over) if over else cfg


def run_one(cfg, seed: int, out_dir) -> records.RunSummary:
    trace = simulator.run(cfg, seed)
    return records.write_run(out_dir, trace)


def _describe(seed: int, s: records.RunSummary) -> str:
    return (f"seed {seed}: popped {s.popped}/{s.n_balloons} in {s.total_duration:.2f} s, "
            f"attempts {s.attempts}, reattempts {s.reattempts}, "
            f"geofence violations {s.geofence_violations} ({s.end_reason})")


def cmd_run(args) -> int:
    cfg = _load(args)
    seed = cfg.sim.seed if args.seed is None else args.seed
    out = Path(args.out or cfg.output.dir)
    s = run_one(cfg, seed, out)
    print(_describe(seed, s))
    return EXIT_OK


def _parse_seeds(text: str):
    parts = [p.strip() for p in text.split(",") if p.strip()]
    seeds = []
    for p in parts:
        lo, dash, hi = p.partition("-")
        if dash:
            seeds.extend(range(int(lo), int(hi) + 1))
        else:
            seeds.append(int(p))
    return seeds


def _compare_job(job):
    cfg, seed, out = job
    return run_one(cfg, seed, out)


def _summary_row(axis, variant, seed, s: records.RunSummary):
    return (axis, variant, seed, s.n_balloons, s.popped, float(s.total_duration), s.attempts, s.reattempts,
            s.geofence_violations, float(s.distance_flown), float(s.confirmed_per_balloon),
            float(s.hypotheses_per_balloon), s.max_confirmed_per_balloon, s.end_reason)


def compare_rows(axis: str, variants, seeds, summaries):
    """Per-seed rows, then one ``seed == "mean"`` row per variant."""
    rows = []
    for variant in variants:
        mine = [_summary_row(axis, variant, seed, summaries[variant, seed]) for seed in seeds]
        rows.extend(mine)
        means = [statistics.fmean(float(r[COMPARE_COLUMNS.index(c)]) for r in mine) for c in _MEAN_COLUMNS]
        rows.append((axis, variant, "mean", *means, ""))
    return rows


def cmd_compare(args) -> int:
    try:
        seeds = _parse_seeds(args.seeds)
    except ValueError:
        print(f"error: cannot parse seed list {args.seeds!r}", file=sys.stderr)
        return EXIT_CONFIG
    if not seeds:
        print("error: empty seed list", file=sys.stderr)
        return EXIT_CONFIG
    base = _load(args)
    key = {"metric": "filter__metric", "strategy": "mission__strategy"}[args.axis]
    variants = AXES[args.axis]
    out = Path(args.out or base.output.dir)
    jobs = []
    for variant in variants:
        cfg = cfgmod.override(base, **{key: variant})
        for seed in seeds:
            jobs.append((cfg, seed, out / variant / f"seed_{seed}"))
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_compare_job, jobs))
    else:
        results = [_compare_job(j) for j in jobs]
    summaries = {}
    for (variant, seed), s in zip(((v, sd) for v in variants for sd in seeds), results):
        summaries[variant, seed] = s
        print(f"{variant} {_describe(seed, s)}")
    rows = compare_rows(args.axis, variants, seeds, summaries)
    records.atomic_write_text(out / "compare.csv", records.csv_text(records.COMPARE_SCHEMA, COMPARE_COLUMNS, rows))
    for r in rows:
        if r[2] == "mean":
            print(f"{r[1]} mean: popped {r[4]:.2f}, reattempts {r[7]:.2f}, "
                  f"confirmed/balloon {r[10]:.2f}, hypotheses/balloon {r[11]:.2f}")
    return EXIT_OK


def cmd_replay(args) -> int:
    path = Path(args.trace)
    try:
        header, events = records.read_trace(path)
    except records.TraceError as exc:
        print(f"error: {path}: {exc}", file=sys.stderr)
        return EXIT_TRACE
    except OSError as exc:
        print(f"error: cannot read trace: {exc}", file=sys.stderr)
        return EXIT_TRACE
    s = records.summarize(header, events)
    text = records.summary_text(s)
    sys.stdout.write(text)
    ref = Path(args.summary) if args.summary else path.with_name("summary.csv")
    if ref.exists():
        if ref.read_text(encoding="utf-8") != text:
            print(f"mismatch: recomputed summary differs from {ref}", file=sys.stderr)
            return EXIT_MISMATCH
        print(f"ok: matches {ref}", file=sys.stderr)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="balloonpop", description="Balloon-popping MAV simulation.")
    sub = p.add_subparsers(dest="command", required=True)
    default_cfg = str(cfgmod.default_config_path())

    def scenario_flags(sp):
        sp.add_argument("--config", default=default_cfg, help="scenario TOML file")
        sp.add_argument("--out", help="output directory (default: output.dir from the config)")
        sp.add_argument("--time-limit", type=float, dest="time_limit", help="simulated seconds")

    r = sub.add_parser("run", help="simulate one seeded scenario")
    scenario_flags(r)
    r.add_argument("--seed", type=int)
    r.add_argument("--strategy", choices=("DIRECT", "STAR"))
    r.add_argument("--metric", choices=("ray", "ground"))
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("compare", help="run both variants of one axis over several seeds")
    scenario_flags(c)
    c.add_argument("--axis", choices=tuple(AXES), required=True)
    c.add_argument("--seeds", default="1-10", help="comma list with ranges, e.g. 1-5,8")
    c.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    c.add_argument("--strategy", choices=("DIRECT", "STAR"), help="fixed strategy for a metric comparison")
    c.add_argument("--metric", choices=("ray", "ground"), help="fixed metric for a strategy comparison")
    c.set_defaults(func=cmd_compare)

    y = sub.add_parser("replay", help="recompute a summary from a trace and audit it")
    y.add_argument("trace")
    y.add_argument("--summary", help="summary.csv to compare against (default: next to the trace)")
    y.set_defaults(func=cmd_replay)
    return p


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except cfgmod.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

"""Run the Grand-Challenge scenario over several seeds and print one line per run.

    python scripts/run_grand_challenge.py --seeds 1-10 --strategy STAR --out out/gc
"""
import argparse
import statistics
import time
from pathlib import Path

from balloonpop import config, records, simulator
from balloonpop.cli import _parse_seeds


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--config", default=str(config.default_config_path()))
    ap.add_argument("--seeds", default="1-10")
    ap.add_argument("--strategy", choices=("DIRECT", "STAR"), default="STAR")
    ap.add_argument("--out", default=None, help="write trace and CSV files per seed under this directory")
    args = ap.parse_args()

    cfg = config.override(config.load(args.config), mission__strategy=args.strategy)
    durations = []
    for seed in _parse_seeds(args.seeds):
        t0 = time.perf_counter()
        trace = simulator.run(cfg, seed)
        wall = time.perf_counter() - t0
        if args.out:
            s = records.write_run(Path(args.out) / f"seed_{seed}", trace)
        else:
            s = records.summarize(trace.header, trace.events)
        gaps = [round(d, 1) for d, searched in records.pop_intervals(trace.events) if not searched]
        durations.append(s.total_duration)
        print(f"seed {seed:3d}  popped {s.popped}/{s.n_balloons}  t {s.total_duration:6.1f} s  "
              f"attempts {s.attempts:2d}  re {s.reattempts}  fence {s.geofence_violations}  "
              f"wall {wall:5.1f} s  intervals {gaps}")
    print(f"mean time {statistics.fmean(durations):.1f} s")


if __name__ == "__main__":
    main()

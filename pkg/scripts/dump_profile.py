"""Plan one jerk-limited axis move and print the 1 kHz profile CSV.

    python scripts/dump_profile.py 50            # rest to rest, 50 m, XY limits
    python scripts/dump_profile.py 3 --v0 3 --z  # start at 3 m/s, Z limits
"""
import argparse
import sys

from balloonpop import trajectory as tj


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("dp", type=float, help="displacement in metres")
    ap.add_argument("--v0", type=float, default=0.0)
    ap.add_argument("--a0", type=float, default=0.0)
    ap.add_argument("--v1", type=float, default=0.0)
    ap.add_argument("--a1", type=float, default=0.0)
    ap.add_argument("--z", action="store_true", help="use the vertical limits")
    ap.add_argument("--rate", type=float, default=1000.0)
    args = ap.parse_args()
    lim = tj.Z_LIMITS if args.z else tj.XY_LIMITS
    prof = tj.plan_axis(tj.AxisState(0.0, args.v0, args.a0), tj.AxisState(args.dp, args.v1, args.a1), lim)
    sys.stdout.write(tj.profile_csv(prof, args.rate))
    print(f"duration {prof.duration:.6f} s", file=sys.stderr)


if __name__ == "__main__":
    main()

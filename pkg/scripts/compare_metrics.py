"""Ray-distance vs ground-plane association under 15% depth noise.

Thin wrapper over ``balloonpop compare --axis metric`` with the depth-noise
scenario; writes out/metric/compare.csv.
"""
import sys
from pathlib import Path

from balloonpop.cli import main

ROOT = Path(__file__).resolve().parents[1]

if __name__ == "__main__":
    sys.exit(main(["compare", "--axis", "metric", "--config", str(ROOT / "configs" / "depth_noise.toml"),
                   "--out", "out/metric", *sys.argv[1:]]))

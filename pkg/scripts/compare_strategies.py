"""DIRECT vs STAR pop strategies on the Grand-Challenge scenario; writes out/strategy/compare.csv."""
import sys

from balloonpop.cli import main

if __name__ == "__main__":
    sys.exit(main(["compare", "--axis", "strategy", "--out", "out/strategy", *sys.argv[1:]]))

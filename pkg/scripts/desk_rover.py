"""Desk-scale rover study: constraint satisfaction and entropy-variant ordering.

    python scripts/desk_rover.py --out runs/acceptance --iterations 60

Trains 50 runs (5 variants x 10 seeds); completed runs are skipped on rerun.
"""
import argparse
import json
import logging

from e2c.harness.desk import run_all


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default="runs/acceptance")
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--iterations", type=int, default=60)
    p.add_argument("--jobs", type=int, default=1)
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO)
    summary = run_all(args.out, range(args.seeds), args.iterations, args.jobs)
    print(json.dumps(summary, indent=2))


if __name__ == "__main__":
    main()

"""Moments and exceedance frequencies of one statistic, from a JSON experiment config.

    python scripts/tail_experiment.py example  > tails.json      # print a sample config
    python scripts/tail_experiment.py run tails.json --out results.json
"""
import argparse
import json
import sys

from capwalk.cli import load_config
from capwalk.deviation_lab import run_experiment

EXAMPLE = {"dim": 5, "n": [256, 512, 1024], "replicates": 1000, "seed": 1,
           "statistic": "cap", "b_n": "sqrt(log n)", "lambdas": [0.25, 0.5, 1.0]}


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="action", required=True)
    sub.add_parser("example")
    r = sub.add_parser("run")
    r.add_argument("config")
    r.add_argument("--workers", type=int, default=None)
    r.add_argument("--out", default="results.json")
    args = p.parse_args()

    if args.action == "example":
        json.dump(EXAMPLE, sys.stdout, indent=2)
        print()
        return
    res = run_experiment(load_config(args.config), args.workers)
    with open(args.out, "w") as fh:
        json.dump(res, fh, indent=2, sort_keys=True)
    for row in res["exceedances"]:
        rate = "-" if row["rate"] is None else f"{row['rate']:.3f}"
        print(f"n={row['n']:6d} lambda={row['lam']:.2f} exceed {row['count']}/{row['replicates']} rate {rate}")


if __name__ == "__main__":
    main()

"""Run acceptance criteria and print one verdict line each.

    python scripts/run_acceptance.py            # all eleven
    python scripts/run_acceptance.py 2 4 6 10   # a selection
"""
import argparse
import json

from capwalk.acceptance import CRITERIA, run_criterion


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("criteria", type=int, nargs="*", default=sorted(CRITERIA))
    p.add_argument("--json", default=None, help="also write the full results here")
    args = p.parse_args()

    results = []
    for k in args.criteria:
        r = run_criterion(k)
        print(r.line(), flush=True)
        results.append(r.as_dict())
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(results, fh, indent=2)


if __name__ == "__main__":
    main()

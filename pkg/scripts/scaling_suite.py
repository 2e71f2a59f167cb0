"""Cross-term exponent, capacity variance drift and error-bound growth over a grid of walk lengths.

    python scripts/scaling_suite.py --replicates 2000 --out scaling.json
"""
import argparse
import json
import time

from capwalk.deviation_lab import scaling_suite


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--ns", type=int, nargs="+", default=[2**k for k in range(8, 14)])
    p.add_argument("--replicates", type=int, default=2000)
    p.add_argument("--seed", type=int, default=2024)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--out", default="scaling.json")
    args = p.parse_args()

    t0 = time.perf_counter()
    rep = scaling_suite(5, tuple(args.ns), args.replicates, args.seed, args.workers,
                        progress=lambda n: print(f"n={n} done at {time.perf_counter() - t0:.0f} s", flush=True))
    with open(args.out, "w") as fh:
        json.dump(rep.as_dict(), fh, indent=2)
    for f in (rep.chi_exponent, rep.var_drift, rep.ebr_loglog_exponent):
        print(f"{f.name}: {f.exponent:.4f} +- {f.stderr:.4f}")
    for row in rep.cap.per_n():
        print(f"n={row['n']:5d}  E[cap]/n {row['cap_per_n']:.5f}  Var/(n log n) {row['var_ratio']:.5f}")


if __name__ == "__main__":
    main()

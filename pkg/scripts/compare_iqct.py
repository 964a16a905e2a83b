#!/usr/bin/env python3
"""Full reconstruction versus the comb-only (iQCT) baseline on matched data and budgets.

Usage:
  python scripts/compare_iqct.py --ancillas 1-2-2 1-2-3 --steps 2 3 --angles 0.5 1 --seeds 0 1 2 3 4
  python scripts/compare_iqct.py --iterations 500 --out comparison.csv
"""
import argparse
import itertools

from combtomo.experiments import COMPARISON_OPTIMIZER, comparison_cell
from combtomo.persist import write_csv

COLUMNS = ("ancillas", "n_steps", "angle", "seed", "records", "full_loss", "iqct_loss", "wall_time")


def main():
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--ancillas", nargs="+", default=["1-2-2", "1-2-3"])
    parser.add_argument("--steps", type=int, nargs="+", default=[2, 3])
    parser.add_argument("--angles", type=float, nargs="+", default=[0.5, 1.0])
    parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    parser.add_argument("--iterations", type=int, default=COMPARISON_OPTIMIZER.max_iterations)
    parser.add_argument("--max-tuples", type=int, default=200)
    parser.add_argument("--out", default=None, help="optional CSV path")
    args = parser.parse_args()

    rows = []
    for anc, n_steps, angle in itertools.product(args.ancillas, args.steps, args.angles):
        wins = 0
        for seed in args.seeds:
            r = comparison_cell(anc, n_steps, angle, seed, iterations=args.iterations,
                                max_tuples=args.max_tuples)
            wins += r["full_loss"] < r["iqct_loss"]
            rows.append(tuple(r[c] for c in COLUMNS))
            print(f"{anc} N={n_steps} angle={angle:g} seed={seed}: full {r['full_loss']:.3e}  "
                  f"iqct {r['iqct_loss']:.3e}  ({r['records']} records, {r['wall_time']:.0f}s)", flush=True)
        print(f"  full < iqct in {wins}/{len(args.seeds)} seeds", flush=True)
    if args.out:
        write_csv(args.out, COLUMNS, rows)


if __name__ == "__main__":
    main()

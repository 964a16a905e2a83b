#!/usr/bin/env python3
"""Exact-recovery experiment: start a small tangent step away from the truth and reconstruct.

Usage:
  python scripts/recovery.py --seeds 0 1 2 3 4
  python scripts/recovery.py --seeds 0 --tau0 0.01 --gamma1 0.9 --out recovery.csv
"""
import argparse
import dataclasses

from combtomo.experiments import RECOVERY_OPTIMIZER, recovery_run
from combtomo.persist import write_csv

COLUMNS = ("seed", "reason", "iterations", "final_loss", "grad_norm", "delta_ptm", "distance_ratio",
           "orthonormality", "wall_time")


def main():
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    parser.add_argument("--angle", type=float, default=0.05, help="initial tangent step")
    parser.add_argument("--ancillas", default="1-2-2")
    parser.add_argument("--out", default=None, help="optional CSV path")
    for name in ("gamma1", "gamma2", "eps", "tau0", "gradient_norm_tolerance", "reject_ratio"):
        parser.add_argument(f"--{name}", type=float, default=None)
    parser.add_argument("--max-iterations", type=int, default=None)
    args = parser.parse_args()

    overrides = {k: v for k, v in vars(args).items()
                 if k in ("gamma1", "gamma2", "eps", "tau0", "gradient_norm_tolerance", "reject_ratio")
                 and v is not None}
    if args.max_iterations:
        overrides["max_iterations"] = args.max_iterations
    opt = dataclasses.replace(RECOVERY_OPTIMIZER, **overrides)
    print(opt)
    rows = []
    for seed in args.seeds:
        r = recovery_run(seed, args.angle, opt, ancillas=args.ancillas)
        rows.append(tuple(r[c] for c in COLUMNS))
        print(f"seed {seed}: {r['reason']} after {r['iterations']} its, loss {r['final_loss']:.3e}, "
              f"grad {r['grad_norm']:.3e}, dPTM {r['delta_ptm']:.4f}, ratio {r['distance_ratio']:.3f}, "
              f"{r['wall_time']:.0f}s", flush=True)
    if args.out:
        write_csv(args.out, COLUMNS, rows)


if __name__ == "__main__":
    main()

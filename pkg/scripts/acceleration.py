"""Fold-wise acceleration and accuracy comparison of tuned ADS against tuned SGD.

Usage: python3 scripts/acceleration.py [--dataset ml100k] [--tune-fold N] [--out results.json]
"""

import argparse
import json
import logging

from adrc_lfa import bundled_dataset
from adrc_lfa.study import acceleration_study


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--dataset", default="ml100k")
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tune-fold", type=int, default=None,
                   help="tune once on this fold instead of on every fold")
    p.add_argument("--out", default=None, help="write the per-fold outcomes as JSON")
    args = p.parse_args()
    logging.basicConfig(level=logging.ERROR)
    report = acceleration_study(bundled_dataset(args.dataset), k=args.folds, seed=args.seed,
                                tune_fold=args.tune_fold)
    print(report.table())
    for f in report.folds:
        print(f"fold {f.fold}: sgd {f.reference_params}, ads {f.candidate_params}")
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(report.to_dict(), fh, indent=2)


if __name__ == "__main__":
    main()

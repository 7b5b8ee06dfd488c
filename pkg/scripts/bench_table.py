"""Table-style benchmark of SGD, PID and ADRC refiners on bundled datasets.

Usage: python3 scripts/bench_table.py [--datasets small ml100k] [--seeds 0 1 2]
"""

import argparse
import logging

from adrc_lfa import LfaHyper, ModelSpec, RefinerSpec, SplitSpec, TrainConfig, bundled_dataset, run_benchmark


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--datasets", nargs="+", default=["small", "ml100k"])
    p.add_argument("--seeds", nargs="+", type=int, default=[0])
    p.add_argument("--f", type=int, default=10)
    p.add_argument("--eta", type=float, default=0.005)
    p.add_argument("--lam", type=float, default=0.03)
    args = p.parse_args()
    logging.basicConfig(level=logging.ERROR)
    hyper = LfaHyper(args.eta, args.lam)
    models = [ModelSpec(kind, TrainConfig(hyper=hyper, refiner=RefinerSpec(kind), f=args.f))
              for kind in ("sgd", "pid", "adrc")]
    for name in args.datasets:
        report = run_benchmark(bundled_dataset(name), SplitSpec((0.7, 0.2, 0.1)), models,
                               seeds=args.seeds, reference="sgd", dataset_name=name)
        print(report.table())
        print()


if __name__ == "__main__":
    main()

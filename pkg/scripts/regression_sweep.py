"""Regression sweep: DTC/FITC/SGPR/SVGP x S1..S4 over ten synthetic datasets.

Writes metrics.jsonl/metrics.csv under --out and prints the aggregate table.
"""

import argparse

from sgpreg.experiments import parse_seeds, run_experiment, summary_table
from sgpreg.protocols import regression_sweep_config


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="results/regression_sweep")
    ap.add_argument("--seeds", default="0..9")
    ap.add_argument("--max-iter", type=int, default=1000)
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()
    cfg = regression_sweep_config(seeds=parse_seeds(args.seeds), max_iter=args.max_iter, workers=args.workers)
    outcome = run_experiment(cfg, args.out)
    print(summary_table(outcome.records))
    return outcome.exit_status


if __name__ == "__main__":
    raise SystemExit(main())

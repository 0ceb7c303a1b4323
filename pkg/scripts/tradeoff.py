"""Fit quality versus inducing-point quality on one synthetic dataset.

For DTC, FITC and SGPR, compares the unregularized fit (S2) with the
lambda-selected regularized fit (S3): training RMSE and Nystrom error.
"""

import argparse
import json

from sgpreg.protocols import tradeoff_study


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--m", type=int, default=10)
    ap.add_argument("--max-iter", type=int, default=1000)
    ap.add_argument("--json", help="also write the raw results here")
    args = ap.parse_args()
    res = tradeoff_study(seed=args.seed, M=args.m, max_iter=args.max_iter)
    print(f"{'model':8s} {'rmse_train':>12s} {'nystrom':>12s} {'lambda':>8s}")
    print(f"{'gpr':8s} {res['gpr']['rmse_train']:12.5f}")
    for kind in ("dtc", "fitc", "sgpr"):
        r = res[kind]
        print(f"{kind:8s} {r['base']['rmse_train']:12.5f} {r['base']['nystrom_error']:12.5f}")
        print(f"{'r' + kind:8s} {r['reg']['rmse_train']:12.5f} {r['reg']['nystrom_error']:12.5f} {r['lambda']:8.3g}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(res, fh, indent=1, default=float)


if __name__ == "__main__":
    main()

"""Latent reconstruction of the Anuran Calls (MFCC) table, LSVGP with and without the regularizer.

Expects Frogs_MFCCs.csv in --data-dir (default $SGPREG_DATA_DIR or the
current directory); the label columns are dropped.
"""

import argparse
import os
from pathlib import Path

from sgpreg.protocols import ANURAN_FILE, anuran_study


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--data-dir", default=os.environ.get("SGPREG_DATA_DIR", "."))
    ap.add_argument("--subset", type=int, default=4000)
    ap.add_argument("--q", type=int, default=5)
    ap.add_argument("--m", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--max-iter", type=int, default=1000)
    args = ap.parse_args()
    path = Path(args.data_dir) / ANURAN_FILE
    if not path.exists():
        raise SystemExit(f"error: {path} not found")
    res = anuran_study(path, subset=args.subset, Q=args.q, M=args.m, seed=args.seed, max_iter=args.max_iter)
    print(f"rows x features: {res['shape']}")
    for label, key in (("LSVGP", "base"), (f"RLSVGP (lambda={res['lambda']:g})", "reg")):
        m = res[key]
        print(f"{label:28s} askl={m['askl']:.4g} rmse={m['rmse_train']:.4g}")


if __name__ == "__main__":
    main()

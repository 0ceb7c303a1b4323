"""Command-line entry point: ``sgpreg {synth,fit,sweep,lvm,report}``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import yaml

from .data import SyntheticSpec, generate_synthetic, write_table
from .experiments import (
    ConfigError,
    config_from_mapping,
    read_records,
    run_experiment,
    summary_table,
)

REGRESSION_MODELS = ("dtc", "fitc", "sgpr", "svgp")
LVM_MODELS = ("lsgpr", "lsvgp")


def _add_run_flags(p: argparse.ArgumentParser, multi: bool):
    p.add_argument("--config", help="YAML/JSON key-value file; flags override its entries")
    if multi:
        p.add_argument("--model", help="model kind or comma list")
        p.add_argument("--schedule", help="schedule or comma list (s1..s4)")
        p.add_argument("--seeds", help="seed range n..m or comma list")
    else:
        p.add_argument("--model", choices=REGRESSION_MODELS + LVM_MODELS)
        p.add_argument("--schedule", choices=("s1", "s2", "s3", "s4"))
    p.add_argument("--seed", type=int)
    lam = p.add_mutually_exclusive_group()
    lam.add_argument("--lambda", dest="lam", type=float, help="single regularization weight")
    lam.add_argument("--lambda-grid", help="lo:hi:n (log-even), comma list, or default|lvm|flight")
    p.add_argument("--m", type=int, help="number of inducing inputs")
    p.add_argument("--kernel", choices=("matern32", "seard"))
    p.add_argument("--max-iter", type=int)
    p.add_argument("--data", help="data directory or table (relative paths also tried under $SGPREG_DATA_DIR)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--workers", type=int)
    p.add_argument("--plot-data", action="store_true", default=None, help="emit mean/+-2sd curves")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sgpreg", description="Regularized sparse GP experiments")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic regression dataset")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--n-train", type=int, default=100)
    p.add_argument("--n-val", type=int, default=100)
    p.add_argument("--n-test", type=int, default=100)
    p.add_argument("--noise-sd", type=float, default=0.1)

    p = sub.add_parser("fit", help="single regression run")
    _add_run_flags(p, multi=False)

    p = sub.add_parser("sweep", help="batch over models, schedules, seeds and lambdas")
    _add_run_flags(p, multi=True)
    p.add_argument("--include-gpr", action="store_true", default=None)

    p = sub.add_parser("lvm", help="latent-variable model runs")
    _add_run_flags(p, multi=True)
    p.add_argument("--q", type=int, help="latent dimension")
    p.add_argument("--protocol", choices=("table", "flight"), default=None,
                   help="table: reconstruct a data table; flight: standardize, inject noise, reconstruct")
    p.add_argument("--subset", type=int, help="rows sampled per seed without replacement")
    p.add_argument("--drop-columns", help="comma list of column names or indices to drop")
    p.add_argument("--n-rows", type=int, help="rows of the synthetic table (flight protocol)")
    p.add_argument("--n-noisy-rows", type=int)

    p = sub.add_parser("report", help="print aggregates of a finished run")
    p.add_argument("--out", required=True, help="output directory of a run")
    return parser


def _mapping_from_args(args) -> dict:
    mapping = {}
    if getattr(args, "config", None):
        with open(args.config) as fh:
            mapping.update(yaml.safe_load(fh) or {})
    flag_keys = {
        "model": "models", "schedule": "schedules", "seeds": "seeds", "lam": "lambda",
        "lambda_grid": "lambda_grid", "m": "m", "q": "q", "kernel": "kernel", "max_iter": "max_iter",
        "data": "data", "out": "out", "workers": "workers", "plot_data": "plot_data",
        "include_gpr": "include_gpr", "subset": "subset", "drop_columns": "drop_columns",
        "n_rows": "n_rows", "n_noisy_rows": "n_noisy_rows",
    }
    for attr, key in flag_keys.items():
        value = getattr(args, attr, None)
        if value is not None:
            if key == "lambda":
                mapping.pop("lambda_grid", None)
            if key == "lambda_grid":
                mapping.pop("lambda", None)
            mapping[key] = value
    if getattr(args, "seed", None) is not None:
        mapping["seeds"] = [args.seed]
    return mapping


def _cmd_synth(args) -> int:
    data = generate_synthetic(SyntheticSpec(args.n_train, args.n_val, args.n_test, args.noise_sd, args.seed))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_table(out / "train.csv", [[x, y] for x, y in zip(data["X"][:, 0], data["y"])], ["x", "y"])
    write_table(out / "val.csv", [[x, y] for x, y in zip(data["X_val"][:, 0], data["y_val"])], ["x", "y"])
    write_table(out / "test.csv", [[x, f] for x, f in zip(data["X_test"][:, 0], data["f_test"])], ["x", "f"])
    print(f"wrote {out}/train.csv, val.csv, test.csv")
    return 0


def _run(mapping: dict) -> int:
    outcome = run_experiment(config_from_mapping(mapping))
    print(summary_table(outcome.records))
    print(f"\nreports written to {outcome.out_dir}")
    if outcome.n_failed:
        print(f"{outcome.n_failed} run(s) failed; see the 'error' field", file=sys.stderr)
    return outcome.exit_status


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "synth":
            return _cmd_synth(args)
        if args.command == "report":
            print(summary_table(read_records(args.out)))
            return 0
        mapping = _mapping_from_args(args)
        if args.command == "fit":
            mapping.setdefault("experiment", "regression")
        elif args.command == "sweep":
            mapping.setdefault("experiment", "regression")
        else:
            protocol = args.protocol or mapping.get("protocol") or ("table" if mapping.get("data") else "flight")
            mapping.pop("protocol", None)
            mapping.setdefault("experiment", "lvm" if protocol == "table" else "flight")
            mapping.setdefault("models", ["lsvgp"])
            mapping.setdefault("kernel", "seard")
            mapping.setdefault("m", 20)
        mapping.setdefault("out", "results")
        return _run(mapping)
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

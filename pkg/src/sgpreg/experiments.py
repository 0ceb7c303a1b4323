"""Experiment orchestration: config parsing, run fan-out and report files.

A config is a flat mapping whose keys mirror the command-line flags::

    experiment: regression        # regression | lvm | flight
    models: [dtc, fitc, sgpr, svgp]
    schedules: [s1, s2, s3, s4]
    seeds: 0..9
    m: 10
    kernel: matern32
    lambda_grid: 0.01:100:20      # or a list, or default | lvm | flight
    max_iter: 1000
    include_gpr: true

Outputs (in ``out``):

* ``metrics.jsonl``: one record per (model, schedule, seed) plus baseline and
  aggregate records; no timing fields, so reruns are byte-identical.
* ``candidates.jsonl``: one record per lambda tried during selection.
* ``metrics.csv``: flat table of the run, baseline and aggregate records.
* ``timing.jsonl``: wall-clock time per record.
* ``config.json``: normalized config and its hash.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from . import __version__
from .data import (
    NoiseInjectionSpec,
    SyntheticSpec,
    generate_latent_table,
    generate_synthetic,
    inject_noise,
    load_table,
    resolve_data_path,
    seed_streams,
    standardize,
)
from .kernels import KernelFamily
from .latent import LvmKind
from .optim import OptimizeConfig
from .schedules import (
    DEFAULT_GRID,
    FLIGHT_GRID,
    LVM_GRID,
    RegressionInit,
    RunResult,
    Schedule,
    ScheduleConfig,
    run_gpr,
    run_lvm_schedule,
    run_schedule,
    select_lambda,
)
from .sparse import SgpKind, predict_sgp

log = logging.getLogger(__name__)

EXPERIMENTS = ("regression", "lvm", "flight")
AGGREGATE_METRICS = ("rmse_train", "rmse_val", "rmse_test", "nystrom_error", "askl", "divergence",
                     "rmse_clean", "rmse_noisy_rows", "rmse_clean_rows")
TIMING_FIELDS = ("wall_time",)
CSV_FIELDS = ("row_type", "model_kind", "schedule", "seed", "lambda", "n", "rmse_train", "rmse_val",
              "rmse_test", "nystrom_error", "askl", "divergence", "kl_xz", "kl_zx", "rmse_clean",
              "rmse_noisy_rows", "rmse_clean_rows", "objective_recon", "objective_divergence",
              "objective_total", "beta", "variance", "lengthscales", "iterations", "converged",
              "warnings", "error", "summary", "config_hash", "versions")


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# parsing helpers
# ---------------------------------------------------------------------------


def parse_seeds(spec) -> list:
    """``"0..9"`` (inclusive), ``"3"``, ``"1,4,7"``, an int or a list."""
    if isinstance(spec, (int, np.integer)):
        return [int(spec)]
    if isinstance(spec, (list, tuple)):
        return [int(s) for s in spec]
    text = str(spec).strip()
    if ".." in text:
        lo, hi = text.split("..", 1)
        lo, hi = int(lo), int(hi)
        if hi < lo:
            raise ConfigError(f"empty seed range {text!r}")
        return list(range(lo, hi + 1))
    return [int(s) for s in text.split(",") if s.strip()]


def parse_lambda_grid(spec) -> list:
    """``"lo:hi:n"`` (log-even, inclusive), a comma list, a list, or a preset
    name (``default``, ``lvm``, ``flight``)."""
    presets = {"default": DEFAULT_GRID, "lvm": LVM_GRID, "flight": FLIGHT_GRID}
    if isinstance(spec, (list, tuple)):
        grid = [float(v) for v in spec]
    elif isinstance(spec, str) and spec.strip().lower() in presets:
        grid = list(presets[spec.strip().lower()])
    elif isinstance(spec, str) and ":" in spec:
        parts = spec.split(":")
        if len(parts) != 3:
            raise ConfigError(f"lambda grid {spec!r} must look like lo:hi:n")
        lo, hi, n = float(parts[0]), float(parts[1]), int(parts[2])
        if lo <= 0 or hi < lo or n < 1:
            raise ConfigError(f"invalid log grid {spec!r}")
        grid = list(np.logspace(np.log10(lo), np.log10(hi), n))
    else:
        grid = [float(v) for v in str(spec).split(",") if v.strip()]
    if not grid or min(grid) < 0:
        raise ConfigError("lambda grid must be a non-empty list of non-negative values")
    return grid


# ---------------------------------------------------------------------------
# config
# ---------------------------------------------------------------------------


@dataclasses.dataclass
class ExperimentConfig:
    experiment: str = "regression"
    models: tuple = ("sgpr",)
    schedules: tuple = ("s2",)
    seeds: tuple = (0,)
    m: int = 10
    q: int = 5
    kernel: str = "matern32"
    lam: Optional[float] = None
    lambda_grid: Optional[tuple] = None
    max_iter: int = 1000
    include_gpr: bool = False
    data: Optional[str] = None
    drop_columns: tuple = ()
    header: object = "auto"
    delimiter: str = ","
    subset: Optional[int] = None
    n_rows: int = 4000
    n_noisy_rows: int = 500
    injected_noise_sd: float = 1.0
    noise_sd: float = 0.1
    n_train: int = 100
    n_val: int = 100
    n_test: int = 100
    plot_data: bool = False
    out: str = "results"
    workers: int = 1

    # keys that do not affect results and so stay out of the hash
    _UNHASHED = ("out", "workers")

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"experiment must be one of {EXPERIMENTS}")
        self.models = tuple(str(m).lower() for m in self.models)
        self.schedules = tuple(str(s).lower() for s in self.schedules)
        if not self.models:
            raise ConfigError("model list is empty")
        if not self.schedules:
            raise ConfigError("schedule list is empty")
        if not self.seeds:
            raise ConfigError("seed list is empty")
        allowed = {k.value for k in LvmKind} if self.experiment != "regression" else {k.value for k in SgpKind}
        for m in self.models:
            if m not in allowed:
                raise ConfigError(f"model {m!r} is not valid for a {self.experiment} experiment")
        for s in self.schedules:
            Schedule(s)
        KernelFamily(self.kernel)
        if self.experiment != "regression" and KernelFamily(self.kernel) is not KernelFamily.SEARD:
            self.kernel = KernelFamily.SEARD.value
        if self.lam is not None and self.lambda_grid is not None:
            raise ConfigError("give either lambda or lambda_grid, not both")
        if self.lam is not None and self.lam < 0:
            raise ConfigError("lambda must be non-negative")
        if self.max_iter < 1 or self.m < 1 or self.q < 1 or self.workers < 1:
            raise ConfigError("max_iter, m, q and workers must be >= 1")
        if self.experiment == "lvm" and not self.data:
            raise ConfigError("lvm experiments need a data table")
        self.seeds = tuple(int(s) for s in self.seeds)
        if self.lambda_grid is not None:
            self.lambda_grid = tuple(float(v) for v in self.lambda_grid)
        self.drop_columns = tuple(self.drop_columns)

    @property
    def grid(self) -> list:
        if self.lam is not None:
            return [float(self.lam)]
        if self.lambda_grid is not None:
            return list(self.lambda_grid)
        return list({"regression": DEFAULT_GRID, "lvm": LVM_GRID, "flight": FLIGHT_GRID}[self.experiment])

    def hashable(self) -> dict:
        d = dataclasses.asdict(self)
        for k in self._UNHASHED:
            d.pop(k)
        d["lambda_grid"] = self.grid
        d.pop("lam")
        return d

    @property
    def config_hash(self) -> str:
        blob = json.dumps(self.hashable(), sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


_ALIASES = {"lambda": "lam", "model": "models", "schedule": "schedules", "seed": "seeds",
            "max-iter": "max_iter", "lambda-grid": "lambda_grid"}


def config_from_mapping(mapping: dict) -> ExperimentConfig:
    fields = {f.name for f in dataclasses.fields(ExperimentConfig)}
    kw = {}
    for key, value in mapping.items():
        key = _ALIASES.get(key, key).replace("-", "_")
        if key not in fields:
            raise ConfigError(f"unknown config key {key!r}")
        kw[key] = value
    for key in ("models", "schedules", "drop_columns"):
        if key in kw and isinstance(kw[key], str):
            kw[key] = [s.strip() for s in kw[key].split(",") if s.strip()]
    if "seeds" in kw:
        kw["seeds"] = parse_seeds(kw["seeds"])
    if "lambda_grid" in kw and kw["lambda_grid"] is not None:
        kw["lambda_grid"] = parse_lambda_grid(kw["lambda_grid"])
    try:
        return ExperimentConfig(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        mapping = yaml.safe_load(fh) or {}
    if not isinstance(mapping, dict):
        raise ConfigError(f"{path}: config must be a key-value mapping")
    return config_from_mapping(mapping)


def versions() -> dict:
    import jax
    import scipy

    return {"sgpreg": __version__, "numpy": np.__version__, "scipy": scipy.__version__, "jax": jax.__version__}


# ---------------------------------------------------------------------------
# data per seed
# ---------------------------------------------------------------------------


def _regression_data(cfg: ExperimentConfig, seed: int) -> dict:
    if cfg.data:
        return load_regression_dir(cfg.data)
    return generate_synthetic(SyntheticSpec(cfg.n_train, cfg.n_val, cfg.n_test, cfg.noise_sd, seed))


def load_regression_dir(path) -> dict:
    """Read ``train.csv``, optional ``val.csv`` and ``test.csv`` written by ``synth``."""
    path = resolve_data_path(path)
    out = {}
    for name, (xk, yk) in {"train": ("X", "y"), "val": ("X_val", "y_val"), "test": ("X_test", "f_test")}.items():
        f = path / f"{name}.csv"
        if f.exists():
            t = load_table(f).values
            out[xk], out[yk] = t[:, :-1], t[:, -1]
    if "X" not in out:
        raise FileNotFoundError(f"{path / 'train.csv'} not found")
    return out


def _lvm_data(cfg: ExperimentConfig, seed: int) -> dict:
    table = load_table(cfg.data, header=cfg.header if cfg.header != "auto" else "auto",
                       delimiter=cfg.delimiter, drop_columns=cfg.drop_columns)
    Y = table.values
    if cfg.subset is not None and cfg.subset < Y.shape[0]:
        (rng,) = seed_streams(seed, 1)
        Y = Y[np.sort(rng.choice(Y.shape[0], size=cfg.subset, replace=False))]
    return {"Y": Y}


def _flight_data(cfg: ExperimentConfig, seed: int) -> dict:
    if cfg.data:
        raw = load_table(cfg.data, header=cfg.header, delimiter=cfg.delimiter,
                         drop_columns=cfg.drop_columns).values
    else:
        raw = generate_latent_table(cfg.n_rows, 8, seed=0)
    Y, _ = standardize(raw)
    noisy, mask = inject_noise(Y, NoiseInjectionSpec(cfg.n_noisy_rows, cfg.injected_noise_sd, seed))
    return {"Y": noisy, "Y_truth": Y, "mask": mask}


# ---------------------------------------------------------------------------
# one task = (model, schedule, seed)
# ---------------------------------------------------------------------------


def _jsonable(value):
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (np.floating, float)):
        v = float(value)
        return v if math.isfinite(v) else None
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, np.bool_):
        return bool(value)
    return value


def _run_one(cfg: ExperimentConfig, kind: str, schedule: Optional[str], seed: int, lam: Optional[float]):
    if cfg.experiment == "regression":
        data = _regression_data(cfg, seed)
        init = RegressionInit(family=KernelFamily(cfg.kernel), domain=None if cfg.data else (0.0, 1.0))
        opt = OptimizeConfig(max_iter=cfg.max_iter)
        if kind == "gpr":
            return run_gpr(data, opt, init)
        sched = ScheduleConfig(schedule, lam)
        return run_schedule(kind, data, sched, opt, init=init, M=cfg.m, seed=seed)
    data = _lvm_data(cfg, seed) if cfg.experiment == "lvm" else _flight_data(cfg, seed)
    return run_lvm_schedule(kind, data["Y"], ScheduleConfig(schedule, lam), OptimizeConfig(max_iter=cfg.max_iter),
                            Q=cfg.q, M=cfg.m, seed=seed, Y_truth=data.get("Y_truth"), mask=data.get("mask"))


def _plot_rows(cfg: ExperimentConfig, result: RunResult, seed: int):
    if cfg.experiment != "regression" or not hasattr(result.state, "kind"):
        return None
    data = _regression_data(cfg, seed)
    grid = np.linspace(float(np.min(data["X"])), float(np.max(data["X"])), 200)[:, None]
    mean, var, _ = predict_sgp(result.state, data["X"], data["y"], grid, check=False)
    sd = np.sqrt(var)
    return {"x": grid[:, 0].tolist(), "mean": mean.tolist(), "lower": (mean - 2 * sd).tolist(),
            "upper": (mean + 2 * sd).tolist(), "Z": np.ravel(result.state.Z).tolist()}


def run_task(cfg: ExperimentConfig, kind: str, schedule: Optional[str], seed: int) -> dict:
    """Run (and, for s3/s4, lambda-select) one model/schedule/seed.

    Never raises: failures come back as records carrying an ``error``.
    """
    base = {"model_kind": kind, "schedule": schedule, "seed": seed}
    candidates = []
    try:
        if schedule is not None and Schedule(schedule).regularized:
            grid = cfg.grid
            results = []
            for lam in grid:
                try:
                    results.append((lam, _run_one(cfg, kind, schedule, seed, lam)))
                except Exception as exc:
                    results.append((lam, exc))
            for lam, r in results:
                if isinstance(r, RunResult):
                    candidates.append({**r.metrics, "row_type": "candidate", "seed": seed})
                else:
                    candidates.append({**base, "row_type": "candidate", "lambda": lam,
                                       "error": f"{type(r).__name__}: {r}"})
            ok = [(lam, r) for lam, r in results if isinstance(r, RunResult)
                  and r.metrics.get("rmse_val") is not None and np.isfinite(r.metrics["rmse_val"])]
            if not ok:
                raise RuntimeError(f"all {len(grid)} lambda runs failed")
            lam, best = min(ok, key=lambda t: (t[1].metrics["rmse_val"], t[0]))
            row = {**best.metrics, "row_type": "run", "seed": seed, "selected_lambda": lam,
                   "lambda_grid_size": len(grid)}
        else:
            best = _run_one(cfg, kind, schedule, seed, None)
            row = {**best.metrics, "row_type": "baseline" if kind == "gpr" else "run", "seed": seed}
        row["error"] = None
        plot = _plot_rows(cfg, best, seed) if cfg.plot_data else None
    except Exception as exc:  # recorded, batch continues
        log.warning("run %s/%s/seed %d failed: %s", kind, schedule, seed, exc)
        row = {**base, "row_type": "baseline" if kind == "gpr" else "run", "error": f"{type(exc).__name__}: {exc}"}
        plot = None
    return {"row": _jsonable(row), "candidates": _jsonable(candidates), "plot": plot}


# ---------------------------------------------------------------------------
# aggregation and output
# ---------------------------------------------------------------------------


def mean_sd(values) -> tuple:
    """Mean and sample (n-1) standard deviation; sd is None for n < 2."""
    v = np.asarray([x for x in values if x is not None], dtype=float)
    if v.size == 0:
        return None, None
    return float(np.mean(v)), (float(np.std(v, ddof=1)) if v.size > 1 else None)


def aggregate(rows: list) -> list:
    groups = {}
    for r in rows:
        if r.get("row_type") in ("run", "baseline"):
            groups.setdefault((r["model_kind"], r.get("schedule")), []).append(r)
    out = []
    for (kind, schedule), members in groups.items():
        ok = [m for m in members if not m.get("error")]
        agg = {"row_type": "aggregate", "model_kind": kind, "schedule": schedule,
               "n": len(ok), "n_failed": len(members) - len(ok)}
        for key in AGGREGATE_METRICS:
            vals = [m.get(key) for m in ok if m.get(key) is not None]
            if vals:
                mu, sd = mean_sd(vals)
                agg[f"{key}_mean"], agg[f"{key}_sd"] = mu, sd
        if "rmse_test_mean" in agg:
            agg["summary"] = format_mean_sd(agg["rmse_test_mean"], agg["rmse_test_sd"])
        elif "rmse_train_mean" in agg:
            agg["summary"] = format_mean_sd(agg["rmse_train_mean"], agg["rmse_train_sd"])
        out.append(_jsonable(agg))
    return out


def format_mean_sd(mean, sd, digits: int = 3) -> str:
    if mean is None:
        return ""
    return f"{mean:.{digits}f}" if sd is None else f"{mean:.{digits}f}({sd:.{digits}f})"


def _flat(row: dict) -> dict:
    out = {}
    for k in CSV_FIELDS:
        if k.startswith("objective_"):
            v = (row.get("objective") or {}).get(k[len("objective_"):])
        elif row.get("row_type") == "aggregate" and k in AGGREGATE_METRICS:
            v = row.get(f"{k}_mean")
        else:
            v = row.get(k)
        if k == "lambda" and row.get("selected_lambda") is not None:
            v = row["selected_lambda"]
        if isinstance(v, list):
            v = ";".join(str(x) for x in v)
        elif isinstance(v, dict):
            v = ";".join(f"{a}={b}" for a, b in sorted(v.items()))
        out[k] = "" if v is None else v
    return out


def write_reports(out_dir, records: list, candidates: list, timings: list, cfg: ExperimentConfig,
                  plots: Optional[list] = None):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "metrics.jsonl", "w") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")
    with open(out / "candidates.jsonl", "w") as fh:
        for r in candidates:
            fh.write(json.dumps(r, sort_keys=True) + "\n")
    with open(out / "timing.jsonl", "w") as fh:
        for r in timings:
            fh.write(json.dumps(r, sort_keys=True) + "\n")
    with open(out / "metrics.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_FIELDS)
        w.writeheader()
        for r in records:
            w.writerow(_flat(r))
    with open(out / "config.json", "w") as fh:
        json.dump({"config": cfg.hashable(), "config_hash": cfg.config_hash, "versions": versions()},
                  fh, indent=2, sort_keys=True, default=str)
    if plots:
        pdir = out / "plots"
        pdir.mkdir(exist_ok=True)
        for key, plot in plots:
            with open(pdir / f"{key}.csv", "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["x", "mean", "lower", "upper"])
                w.writerows(zip(plot["x"], plot["mean"], plot["lower"], plot["upper"]))
            with open(pdir / f"{key}_Z.csv", "w", newline="") as fh:
                fh.write("z\n" + "".join(f"{z!r}\n" for z in plot["Z"]))


def _strip_timing(row: dict) -> tuple:
    timing = {k: row.pop(k) for k in TIMING_FIELDS if k in row}
    return row, timing


def _task_worker(args):
    cfg_dict, kind, schedule, seed = args
    return run_task(ExperimentConfig(**cfg_dict), kind, schedule, seed)


def plan_tasks(cfg: ExperimentConfig) -> list:
    tasks = []
    for seed in cfg.seeds:
        if cfg.experiment == "regression" and cfg.include_gpr:
            tasks.append(("gpr", None, seed))
        for kind in cfg.models:
            for schedule in cfg.schedules:
                tasks.append((kind, schedule, seed))
    return tasks


@dataclasses.dataclass
class ExperimentOutcome:
    records: list
    candidates: list
    n_failed: int
    out_dir: Path

    @property
    def exit_status(self) -> int:
        return 1 if self.n_failed else 0


def run_experiment(cfg, out_dir=None) -> ExperimentOutcome:
    """Run every (model, schedule, seed) of ``cfg`` and write the report files."""
    if not isinstance(cfg, ExperimentConfig):
        cfg = load_config(cfg) if isinstance(cfg, (str, os.PathLike)) else config_from_mapping(cfg)
    out_dir = Path(out_dir or cfg.out)
    if cfg.data and not resolve_data_path(cfg.data).exists():
        raise FileNotFoundError(f"data path {cfg.data!r} not found")
    tasks = plan_tasks(cfg)
    if cfg.workers > 1:
        import multiprocessing as mp

        cfg_dict = dataclasses.asdict(cfg)
        with ProcessPoolExecutor(cfg.workers, mp_context=mp.get_context("spawn")) as pool:
            results = list(pool.map(_task_worker, [(cfg_dict, *t) for t in tasks]))
    else:
        results = [run_task(cfg, *t) for t in tasks]

    stamp = {"config_hash": cfg.config_hash, "versions": versions()}
    records, candidates, timings, plots = [], [], [], []
    for (kind, schedule, seed), res in zip(tasks, results):
        row, timing = _strip_timing(res["row"])
        records.append({**row, **stamp})
        timings.append({"model_kind": kind, "schedule": schedule, "seed": seed, "row_type": row["row_type"],
                        **timing})
        for c in res["candidates"]:
            c, t = _strip_timing(c)
            candidates.append({**c, **stamp})
            timings.append({"model_kind": kind, "schedule": schedule, "seed": seed, "row_type": "candidate",
                            "lambda": c.get("lambda"), **t})
        if res["plot"] is not None:
            plots.append((f"{kind}_{schedule}_seed{seed}", res["plot"]))
    n_failed = sum(1 for r in records if r.get("error"))
    records.extend({**a, **stamp} for a in aggregate(records))
    write_reports(out_dir, records, candidates, timings, cfg, plots)
    return ExperimentOutcome(records, candidates, n_failed, out_dir)


def read_records(path) -> list:
    path = Path(path)
    if path.is_dir():
        path = path / "metrics.jsonl"
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def summary_table(records: list) -> str:
    """Plain-text table of the aggregate rows: model, schedule, n and mean(sd) of each metric."""
    aggs = [r for r in records if r.get("row_type") == "aggregate"]
    metrics = [m for m in AGGREGATE_METRICS if any(f"{m}_mean" in a for a in aggs)]
    header = ["model", "schedule", "n"] + metrics
    lines = [header]
    for a in aggs:
        lines.append([a["model_kind"], a.get("schedule") or "-", str(a["n"])]
                     + [format_mean_sd(a.get(f"{m}_mean"), a.get(f"{m}_sd"), 4) for m in metrics])
    widths = [max(len(row[i]) for row in lines) for i in range(len(header))]
    return "\n".join("  ".join(c.ljust(w) for c, w in zip(row, widths)) for row in lines)

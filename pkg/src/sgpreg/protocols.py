"""End-to-end study protocols shared by the scripts and the acceptance suite.

* :func:`regression_sweep_config`: the multi-seed regression sweep (4 models x 4 schedules).
* :func:`tradeoff_study`: one synthetic dataset, each sparse model with and
  without the regularizer, comparing training RMSE and the Nystrom error.
* :func:`anuran_study`: latent reconstruction of a real table (S2 vs S3).
* :func:`masked_reconstruction_study`: standardize, inject noise into one
  feature of some rows, reconstruct, and score masked and unmasked rows.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .data import (
    NoiseInjectionSpec,
    SyntheticSpec,
    generate_latent_table,
    generate_synthetic,
    inject_noise,
    load_table,
    seed_streams,
    standardize,
)
from .experiments import ExperimentConfig
from .optim import OptimizeConfig
from .schedules import (
    DEFAULT_GRID,
    FLIGHT_GRID,
    LVM_GRID,
    RegressionInit,
    ScheduleConfig,
    run_gpr,
    run_lvm_schedule,
    run_schedule,
    select_lambda,
)

ANURAN_FILE = "Frogs_MFCCs.csv"
ANURAN_LABELS = ("Family", "Genus", "Species", "RecordID")


def regression_sweep_config(seeds: Sequence[int] = tuple(range(10)), max_iter: int = 1000, **overrides) -> ExperimentConfig:
    base = dict(experiment="regression", models=("dtc", "fitc", "sgpr", "svgp"),
                schedules=("s1", "s2", "s3", "s4"), seeds=tuple(seeds), m=10, kernel="matern32",
                lambda_grid=tuple(DEFAULT_GRID), max_iter=max_iter, include_gpr=True)
    base.update(overrides)
    return ExperimentConfig(**base)


def tradeoff_study(seed: int = 0, M: int = 10, kinds=("dtc", "fitc", "sgpr"), max_iter: int = 1000,
                   grid: Sequence[float] = DEFAULT_GRID) -> dict:
    """S2 versus lambda-selected S3 on a single synthetic dataset, plus the exact GP."""
    data = generate_synthetic(SyntheticSpec(seed=seed))
    init = RegressionInit(domain=(0.0, 1.0))
    cfg = OptimizeConfig(max_iter=max_iter)
    out = {"gpr": run_gpr(data, cfg, init).metrics}
    for kind in kinds:
        base = run_schedule(kind, data, ScheduleConfig("s2"), cfg, init=init, M=M, seed=seed).metrics
        lam, best, _ = select_lambda(kind, data, "s3", grid, cfg, init=init, M=M, seed=seed)
        out[kind] = {"base": base, "reg": best.metrics, "lambda": lam}
    return out


def anuran_study(path, subset: int = 4000, Q: int = 5, M: int = 20, seed: int = 0, max_iter: int = 1000,
                 grid: Sequence[float] = LVM_GRID, kind: str = "lsvgp") -> dict:
    table = load_table(path, drop_columns=ANURAN_LABELS)
    Y = table.values
    if subset < Y.shape[0]:
        (rng,) = seed_streams(seed, 1)
        Y = Y[np.sort(rng.choice(Y.shape[0], size=subset, replace=False))]
    cfg = OptimizeConfig(max_iter=max_iter)
    base = run_lvm_schedule(kind, Y, ScheduleConfig("s2"), cfg, Q=Q, M=M, seed=seed).metrics
    lam, best, _ = select_lambda(kind, Y, "s3", grid, cfg, Q=Q, M=M, seed=seed)
    return {"base": base, "reg": best.metrics, "lambda": lam, "shape": Y.shape}


@dataclass
class MaskedStudy:
    """Per-M results; ``runs[M]`` maps a label (``base``, ``lam=<v>``) to per-seed metrics."""

    n_rows: int
    n_noisy_rows: int
    seeds: tuple
    selected: dict = field(default_factory=dict)
    runs: dict = field(default_factory=dict)

    def mean(self, M: int, label: str, key: str) -> float:
        return float(np.mean([m[key] for m in self.runs[M][label]]))

    def regularized_label(self, M: int) -> str:
        return f"lam={self.selected[M]:g}"


def masked_reconstruction_study(n_rows: int = 80_000, n_noisy_rows: Optional[int] = None, Ms=(10, 20), Q: int = 2,
                                seeds: Sequence[int] = tuple(range(10)), grid: Sequence[float] = FLIGHT_GRID,
                                max_iter: int = 1000, table=None, log=None) -> MaskedStudy:
    """Masked/unmasked reconstruction with and without the regularizer.

    The clean table (``table`` or the synthetic 2-D latent generator) is
    standardized once; each seed injects a fresh noise pattern.  Lambda is
    chosen on the first seed by reconstruction RMSE against the observed
    (noisy) data and then reused for the remaining seeds.
    """
    raw = generate_latent_table(n_rows, 8, seed=0) if table is None else np.asarray(table, float)
    n_rows = raw.shape[0]
    n_noisy_rows = n_rows // 8 if n_noisy_rows is None else n_noisy_rows
    Y, _ = standardize(raw)
    seeds = tuple(seeds)
    study = MaskedStudy(n_rows, n_noisy_rows, seeds)
    cfg = OptimizeConfig(max_iter=max_iter)
    noisy = {s: inject_noise(Y, NoiseInjectionSpec(n_noisy_rows, 1.0, s)) for s in seeds}

    def run(M, seed, schedule):
        Yn, mask = noisy[seed]
        return run_lvm_schedule("lsvgp", Yn, schedule, cfg, Q=Q, M=M, seed=seed, Y_truth=Y, mask=mask).metrics

    for M in Ms:
        runs = {"base": [run(M, s, ScheduleConfig("s2")) for s in seeds]}
        first = {lam: run(M, seeds[0], ScheduleConfig("s3", lam)) for lam in grid}
        lam = min(first, key=lambda v: (first[v]["rmse_val"], v))
        study.selected[M] = lam
        runs[study.regularized_label(M)] = [first[lam]] + [run(M, s, ScheduleConfig("s3", lam)) for s in seeds[1:]]
        for v, m in first.items():
            runs.setdefault(f"lam={v:g}", [m])
        study.runs[M] = runs
        if log:
            log(f"M={M}: selected lambda {lam:g}")
    return study

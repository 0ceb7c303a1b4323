"""Training schedules S1-S4 and lambda selection.

S1 keeps the inducing inputs at their initial positions, S2 learns them,
S3 and S4 learn them under a KL penalty between Gaussian summaries of the
inputs and the inducing inputs (S3: KL(q_x||q_z), S4: KL(q_z||q_x)).  The
same code path serves the regression models (dtc/fitc/sgpr/svgp), the exact
GP baseline and the latent-variable models (lsgpr/lsvgp).
"""

from __future__ import annotations

import enum
import functools
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import jax
import jax.numpy as jnp
import numpy as np

from . import latent
from .data import kmeans_init, pca_init, rmse, seed_streams
from .exact import GprModel, l0_jax, predict_full
from .kernels import KernelFamily, KernelSpec
from .latent import LvmKind, LvmState
from .optim import OptimizeConfig, Trace, maximize
from .regularizer import Direction, divergence_jax, fit_gaussian_summary, kl_gaussian
from .sparse import (
    SgpKind,
    SgpState,
    nystrom_error,
    objective_l1,
    optimal_qu,
    predict_sgp,
    sgp_objective_jax,
    state_from_params,
    state_params,
)

LOG_BOUND = 10.0

DEFAULT_GRID = tuple(np.logspace(-2, 2, 20))
LVM_GRID = (1.0, 10.0, 100.0, 1000.0)
FLIGHT_GRID = (1.0, 10.0, 100.0, 1000.0, 10000.0)


class Schedule(str, enum.Enum):
    S1 = "s1"  # fixed Z
    S2 = "s2"  # learned Z
    S3 = "s3"  # learned Z, KL(q_x || q_z)
    S4 = "s4"  # learned Z, KL(q_z || q_x)

    @property
    def learns_z(self) -> bool:
        return self is not Schedule.S1

    @property
    def regularized(self) -> bool:
        return self in (Schedule.S3, Schedule.S4)

    @property
    def direction(self) -> Direction:
        return Direction.ZX if self is Schedule.S4 else Direction.XZ


@dataclass(frozen=True)
class ScheduleConfig:
    schedule: Schedule
    lam: Optional[float] = None
    lambda_grid: Optional[tuple] = None

    def __post_init__(self):
        object.__setattr__(self, "schedule", Schedule(self.schedule))
        if self.lambda_grid is not None:
            object.__setattr__(self, "lambda_grid", tuple(float(v) for v in self.lambda_grid))
        has_lam = self.lam is not None or self.lambda_grid is not None
        if self.schedule.regularized and not has_lam:
            raise ValueError(f"schedule {self.schedule.value} needs lambda or a lambda grid")
        if not self.schedule.regularized and has_lam:
            raise ValueError(f"schedule {self.schedule.value} takes no lambda")
        if self.lam is not None and not self.lam >= 0:
            raise ValueError("lambda must be non-negative")
        if self.lambda_grid is not None and (not self.lambda_grid or min(self.lambda_grid) < 0):
            raise ValueError("lambda grid must be a non-empty list of non-negative values")

    def with_lambda(self, lam: float) -> "ScheduleConfig":
        return ScheduleConfig(self.schedule, float(lam))

    @property
    def effective_lambda(self) -> float:
        return float(self.lam) if self.lam is not None else 0.0


# ---------------------------------------------------------------------------
# flat-vector problems with cached compilation
# ---------------------------------------------------------------------------


def _unflatten(flat, layout):
    out, i = {}, 0
    for key, shape in layout:
        n = int(np.prod(shape, dtype=int))
        out[key] = flat[i : i + n].reshape(shape)
        i += n
    return out


@functools.partial(jax.jit, static_argnames=("objective", "layout", "static"))
def _value_and_grad(flat, fixed, data, objective, layout, static):
    return jax.value_and_grad(lambda v: objective({**fixed, **_unflatten(v, layout)}, *data, *static))(flat)


class FlatProblem:
    """Objective over a subset of named parameters, exposed as x -> (f, grad)."""

    def __init__(self, objective, params: dict, trainable: Sequence[str], data: tuple, static: tuple = ()):
        self.objective = objective
        self.layout = tuple((k, tuple(np.shape(params[k]))) for k in trainable)
        self.fixed = {k: jnp.asarray(v) for k, v in params.items() if k not in trainable}
        self.data = tuple(jnp.asarray(d) for d in data)
        self.static = tuple(static)
        self.x0 = np.concatenate([np.ravel(np.asarray(params[k], float)) for k in trainable])

    def bounds(self):
        out = []
        for key, shape in self.layout:
            b = (-LOG_BOUND, LOG_BOUND) if key.startswith("log_") else None
            out.extend([b] * int(np.prod(shape, dtype=int)))
        return out

    def __call__(self, x):
        v, g = _value_and_grad(jnp.asarray(x), self.fixed, self.data, self.objective, self.layout, self.static)
        return float(v), np.asarray(g)

    def unpack(self, x) -> dict:
        params = {k: np.asarray(v) for k, v in self.fixed.items()}
        params.update({k: np.asarray(v) for k, v in _unflatten(np.asarray(x), self.layout).items()})
        return params


def _sgp_total(params, X, y, lam, kind, family, direction):
    return sgp_objective_jax(params, X, y, kind, family) - lam * divergence_jax(X, params["Z"], direction)


def _gpr_total(params, X, y, family):
    return l0_jax(params, X, y, family)


def _lvm_total(params, Y, lam, kind, direction):
    return latent.melbo_jax(params, Y, lam, kind, direction)


# ---------------------------------------------------------------------------
# results
# ---------------------------------------------------------------------------


@dataclass
class RunResult:
    state: object
    metrics: dict
    trace: Trace = field(repr=False, default=None)


def _optimize(problem: FlatProblem, config: OptimizeConfig):
    cfg = OptimizeConfig(config.max_iter, config.grad_tol, config.memory, problem.bounds())
    t0 = time.perf_counter()
    x, trace = maximize(problem, problem.x0, cfg)
    return problem.unpack(x), trace, time.perf_counter() - t0


def _trace_metrics(trace: Trace, wall: float) -> dict:
    return {
        "iterations": trace.n_iter,
        "evaluations": trace.n_evals,
        "converged": trace.converged,
        "status": trace.status,
        "warnings": [trace.warning] if trace.warning else [],
        "wall_time": wall,
    }


def _kl_pair(A, B):
    sa, sb = fit_gaussian_summary(A), fit_gaussian_summary(B)
    return kl_gaussian(sa, sb), kl_gaussian(sb, sa)


# ---------------------------------------------------------------------------
# regression
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RegressionInit:
    """Starting point for regression runs; data-dependent values are filled in
    by :func:`initial_sgp_state`."""

    family: KernelFamily = KernelFamily.MATERN32
    lengthscale: float = 0.2
    noise_fraction: float = 0.1  # initial noise variance as a fraction of var(y)
    domain: Optional[tuple] = None  # grid range for S1; defaults to the input range


def inducing_grid(X, M: int, domain=None, seed: int = 0) -> np.ndarray:
    """Evenly spaced inducing inputs for 1-D inputs (k-means centres otherwise)."""
    X = np.asarray(X, float)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[1] == 1:
        lo, hi = domain if domain is not None else (X.min(), X.max())
        return np.linspace(lo, hi, M)[:, None]
    return kmeans_init(X, M, seed=seed)


def initial_sgp_state(kind, X, y, M: int, init: RegressionInit = RegressionInit(), seed: int = 0) -> SgpState:
    kind = SgpKind(kind)
    X = np.asarray(X, float).reshape(len(y), -1)
    y = np.asarray(y, float)
    vy = float(np.var(y)) if np.var(y) > 0 else 1.0
    family = KernelFamily(init.family)
    ls = np.full(1 if family is KernelFamily.MATERN32 else X.shape[1], init.lengthscale)
    kernel = KernelSpec(family, vy, ls)
    beta = 1.0 / (init.noise_fraction * vy)
    Z = inducing_grid(X, M, init.domain, seed)
    state = SgpState(SgpKind.SGPR if kind is SgpKind.SVGP else kind, kernel, beta, Z)
    if kind is SgpKind.SVGP:
        m, Ls = optimal_qu(state, X, y)
        state = SgpState(kind, kernel, beta, Z, vu_mean=m, vu_chol=Ls)
    return state


def _regression_metrics(predict, data: dict) -> dict:
    out = {"rmse_train": rmse(predict(data["X"]), data["y"])}
    out["rmse_val"] = rmse(predict(data["X_val"]), data["y_val"]) if "X_val" in data else None
    out["rmse_test"] = rmse(predict(data["X_test"]), data["f_test"]) if "f_test" in data else None
    return out


def run_schedule(model_kind, data: dict, schedule: ScheduleConfig, config: OptimizeConfig = None,
                 init: RegressionInit = RegressionInit(), M: int = 10, seed: int = 0) -> RunResult:
    """Train one regression model under one schedule with a single lambda.

    ``data`` holds ``X, y`` and optionally ``X_val, y_val`` and
    ``X_test, f_test``.  Validation RMSE uses the latent predictive mean
    against the noisy validation targets.
    """
    config = config or OptimizeConfig()
    kind = SgpKind(model_kind)
    if schedule.lam is None and schedule.schedule.regularized:
        raise ValueError("run_schedule needs a single lambda; use select_lambda for a grid")
    X = np.asarray(data["X"], float).reshape(len(data["y"]), -1)
    y = np.asarray(data["y"], float)
    state0 = initial_sgp_state(kind, X, y, M, init, seed)
    params = state_params(state0)
    trainable = [k for k in params if k != "Z" or schedule.schedule.learns_z]
    lam = schedule.effective_lambda
    problem = FlatProblem(_sgp_total, params, trainable, (X, y, lam),
                          (kind.value, state0.kernel.family.value, schedule.schedule.direction.value))
    opt, trace, wall = _optimize(problem, config)
    state = state_from_params(kind, state0.kernel.family, opt)

    def predict(Xs):
        return predict_sgp(state, X, y, np.asarray(Xs, float).reshape(-1, X.shape[1]), check=False)[0]

    recon = objective_l1(state, X, y, check=False)
    kl_xz, kl_zx = _kl_pair(X, state.Z)
    div = kl_zx if schedule.schedule is Schedule.S4 else kl_xz
    metrics = {
        "model_kind": kind.value,
        "schedule": schedule.schedule.value,
        "lambda": lam if schedule.schedule.regularized else None,
        **_regression_metrics(predict, data),
        "nystrom_error": nystrom_error(state.kernel, X, state.Z),
        "divergence": div,
        "kl_xz": kl_xz,
        "kl_zx": kl_zx,
        "objective": {"recon": recon, "divergence": div, "lambda": lam, "total": recon - lam * div},
        "beta": state.beta,
        "variance": state.kernel.variance,
        "lengthscales": state.kernel.lengthscales.tolist(),
        **_trace_metrics(trace, wall),
    }
    return RunResult(state, metrics, trace)


def run_gpr(data: dict, config: OptimizeConfig = None, init: RegressionInit = RegressionInit()) -> RunResult:
    """Exact GP baseline trained by maximizing the log marginal likelihood."""
    config = config or OptimizeConfig()
    X = np.asarray(data["X"], float).reshape(len(data["y"]), -1)
    y = np.asarray(data["y"], float)
    s0 = initial_sgp_state("dtc", X, y, 1, init)
    params = {k: v for k, v in state_params(s0).items() if k != "Z"}
    family = s0.kernel.family
    problem = FlatProblem(_gpr_total, params, list(params), (X, y), (family.value,))
    opt, trace, wall = _optimize(problem, config)
    kernel = KernelSpec(family, float(np.exp(opt["log_variance"])), np.exp(opt["log_lengthscales"]))
    model = GprModel(kernel, float(np.exp(opt["log_beta"])), X, y)

    def predict(Xs):
        return predict_full(model, np.asarray(Xs, float).reshape(-1, X.shape[1]))[0]

    l0 = float(_gpr_total({k: jnp.asarray(v) for k, v in opt.items()}, X, y, family.value))
    metrics = {
        "model_kind": "gpr",
        "schedule": None,
        "lambda": None,
        **_regression_metrics(predict, data),
        "nystrom_error": 0.0,
        "objective": {"recon": l0, "divergence": 0.0, "lambda": 0.0, "total": l0},
        "beta": model.beta,
        "variance": kernel.variance,
        "lengthscales": kernel.lengthscales.tolist(),
        **_trace_metrics(trace, wall),
    }
    return RunResult(model, metrics, trace)


# ---------------------------------------------------------------------------
# latent-variable models
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LvmInit:
    q_var: float = 0.05
    snr: float = 100.0  # initial beta = snr / var(Y)


def initial_lvm_state(kind, Y, Q: int, M: int, init: LvmInit = LvmInit(), seed: int = 0) -> LvmState:
    """PCA means rescaled to unit variance, k-means inducing inputs, unit
    lengthscales; LSVGP starts from the optimal q(U) at that point."""
    Y = np.asarray(Y, float)
    mu = pca_init(Y, Q)
    mu = (mu - mu.mean(axis=0)) / mu.std(axis=0)
    (kseed,) = [int(r.integers(2**31)) for r in seed_streams(seed, 1)]
    Z = kmeans_init(mu, M, seed=kseed)
    vy = float(np.var(Y))
    kernel = KernelSpec(KernelFamily.SEARD, vy, np.ones(Q))
    state = LvmState(kernel, init.snr / vy, mu, np.full_like(mu, init.q_var), Z)
    if LvmKind(kind) is LvmKind.LSVGP:
        m, Ls = latent.optimal_qu(state, Y)
        state = LvmState(kernel, state.beta, mu, state.q_X_vars, Z, m, Ls)
    return state


def run_lvm_schedule(model_kind, Y, schedule: ScheduleConfig, config: OptimizeConfig = None,
                     Q: int = 5, M: int = 20, seed: int = 0, init: LvmInit = LvmInit(),
                     Y_truth=None, mask=None) -> RunResult:
    """Train a latent model and measure reconstruction at the embedding means.

    ``Y`` is centred per column before training; reconstructions are
    reported in the original coordinates.  With ``Y_truth`` and ``mask``
    the reconstruction is also scored against the clean data separately on
    masked and unmasked entries.
    """
    config = config or OptimizeConfig()
    kind = LvmKind(model_kind)
    if schedule.lam is None and schedule.schedule.regularized:
        raise ValueError("run_lvm_schedule needs a single lambda; use select_lambda for a grid")
    Y = np.asarray(Y, float)
    offset = Y.mean(axis=0)
    Yc = Y - offset
    state0 = initial_lvm_state(kind, Yc, Q, M, init, seed)
    params = latent.lvm_params(state0, kind)
    trainable = [k for k in params if k != "Z" or schedule.schedule.learns_z]
    lam = schedule.effective_lambda
    problem = FlatProblem(_lvm_total, params, trainable, (Yc, lam),
                          (kind.value, schedule.schedule.direction.value))
    opt, trace, wall = _optimize(problem, config)
    state = latent.lvm_from_params(opt)

    Yhat = latent.reconstruct(state, Yc, kind) + offset
    kl_xz, kl_zx = _kl_pair(state.q_X_means, state.Z)
    div = kl_zx if schedule.schedule is Schedule.S4 else kl_xz
    elbo = float(latent.elbo_jax({k: jnp.asarray(v) for k, v in opt.items()}, jnp.asarray(Yc), kind.value))
    metrics = {
        "model_kind": kind.value,
        "schedule": schedule.schedule.value,
        "lambda": lam if schedule.schedule.regularized else None,
        "rmse_train": rmse(Yhat, Y),
        "rmse_val": rmse(Yhat, Y),
        "rmse_test": None,
        "askl": latent.askl(state.q_X_means, state.Z),
        "divergence": div,
        "kl_xz": kl_xz,
        "kl_zx": kl_zx,
        "objective": {"recon": elbo, "divergence": div, "lambda": lam, "total": elbo - lam * div},
        "beta": state.beta,
        "variance": state.kernel.variance,
        "lengthscales": state.kernel.lengthscales.tolist(),
        **_trace_metrics(trace, wall),
    }
    if Y_truth is not None:
        Y_truth = np.asarray(Y_truth, float)
        metrics["rmse_clean"] = rmse(Yhat, Y_truth)
        if mask is not None:
            mask = np.asarray(mask, bool)
            rows = mask.any(axis=1)
            metrics["rmse_noisy_rows"] = rmse(Yhat[rows], Y_truth[rows]) if rows.any() else None
            metrics["rmse_clean_rows"] = rmse(Yhat[~rows], Y_truth[~rows]) if (~rows).any() else None
    return RunResult(state, metrics, trace)


# ---------------------------------------------------------------------------
# lambda selection
# ---------------------------------------------------------------------------


class AllRunsFailed(RuntimeError):
    pass


def _is_lvm(model_kind) -> bool:
    return str(getattr(model_kind, "value", model_kind)) in {k.value for k in LvmKind}


def select_lambda(model_kind, data, schedule, grid: Sequence[float], config: OptimizeConfig = None,
                  **run_kwargs):
    """Train once per lambda and keep the one with the smallest validation RMSE.

    ``data`` is a regression dict or, for latent models, the data matrix
    (selection then uses reconstruction RMSE).  Ties go to the smaller
    lambda.  Returns ``(best_lambda, best_result, per_lambda)`` where
    ``per_lambda`` lists ``(lambda, RunResult or exception)``.
    """
    grid = [float(v) for v in grid]
    if not grid or min(grid) < 0:
        raise ValueError("grid must be a non-empty list of non-negative values")
    sched = Schedule(schedule.schedule if isinstance(schedule, ScheduleConfig) else schedule)
    if not sched.regularized:
        raise ValueError("lambda selection applies to schedules s3 and s4")
    runner = run_lvm_schedule if _is_lvm(model_kind) else run_schedule
    per_lambda = []
    for lam in grid:
        try:
            per_lambda.append((lam, runner(model_kind, data, ScheduleConfig(sched, lam), config, **run_kwargs)))
        except Exception as exc:  # recorded; selection continues over the rest
            per_lambda.append((lam, exc))
    ok = [(lam, r) for lam, r in per_lambda if isinstance(r, RunResult) and r.metrics.get("rmse_val") is not None
          and np.isfinite(r.metrics["rmse_val"])]
    if not ok:
        raise AllRunsFailed(f"all {len(grid)} lambda runs failed")
    best_lam, best = min(ok, key=lambda t: (t[1].metrics["rmse_val"], t[0]))
    return best_lam, best, per_lambda

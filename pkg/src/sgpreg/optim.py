"""Bounded quasi-Newton maximization and finite-difference gradient checks."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import minimize

log = logging.getLogger(__name__)

# value-and-gradient callable: x -> (f(x), grad f(x))
ValueAndGrad = Callable[[np.ndarray], tuple]


@dataclass
class OptimizeConfig:
    max_iter: int = 1000
    grad_tol: float = 1e-5
    memory: int = 10
    bounds: Optional[Sequence[tuple]] = None

    def __post_init__(self):
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.bounds is not None:
            for b in self.bounds:
                lo, hi = b if b is not None else (None, None)
                if lo is not None and hi is not None and lo > hi:
                    raise ValueError(f"invalid bound {b}")


@dataclass
class Trace:
    values: list = field(default_factory=list)
    n_evals: int = 0
    n_iter: int = 0
    status: str = ""
    warning: Optional[str] = None
    converged: bool = False


class NonFiniteObjective(ValueError):
    pass


def maximize(fun: ValueAndGrad, x0, config: OptimizeConfig = None):
    """Maximize ``fun`` with L-BFGS-B (Moré-Thuente strong-Wolfe line search).

    Returns ``(x_opt, trace)``.  ``trace.values`` holds the objective at each
    accepted iterate, starting with ``x0``; it is non-decreasing.  A line
    search failure is not an error: the best iterate is returned and
    ``trace.warning`` is set.
    """
    config = config or OptimizeConfig()
    x0 = np.asarray(x0, dtype=float).copy()
    f0, g0 = fun(x0)
    if not (np.isfinite(f0) and np.all(np.isfinite(g0))):
        raise NonFiniteObjective("objective or gradient is not finite at the starting point")

    trace = Trace(values=[float(f0)])
    best = {"x": x0.copy(), "f": float(f0)}
    last = {}

    def neg(x):
        trace.n_evals += 1
        f, g = fun(x)
        f = float(f)
        g = np.asarray(g, dtype=float)
        if not (np.isfinite(f) and np.all(np.isfinite(g))):
            # steer the line search back without poisoning the curvature pairs
            last["x"], last["f"] = x.copy(), -np.inf
            return np.inf, np.zeros_like(x)
        last["x"], last["f"] = x.copy(), f
        if f > best["f"]:
            best["x"], best["f"] = x.copy(), f
        return -f, -g

    def callback(xk):
        if "x" in last and np.array_equal(last["x"], xk):
            f = last["f"]
        else:
            f = float(fun(xk)[0])
        trace.values.append(f)

    bounds = None
    if config.bounds is not None:
        bounds = [b if b is not None else (None, None) for b in config.bounds]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        res = minimize(neg, x0, jac=True, method="L-BFGS-B", bounds=bounds, callback=callback,
                       options={"maxiter": config.max_iter, "gtol": config.grad_tol,
                                "maxcor": config.memory, "maxfun": 20 * config.max_iter})
    trace.n_iter = int(res.nit)
    trace.status = str(res.message)
    trace.converged = bool(res.success)
    x_opt = np.asarray(res.x, dtype=float)
    if not res.success and "ITERATIONS REACHED LIMIT" not in trace.status.upper():
        trace.warning = f"optimizer stopped early: {trace.status}"
        log.debug(trace.warning)
    if not np.isfinite(res.fun):
        x_opt = best["x"]
    return x_opt, trace


def grad_check(fun: ValueAndGrad, x, step: float = 1e-6, floor: float = 1e-8,
               stencil: int = 2) -> float:
    """Max over components of |analytic - central difference| / max(|fd|, |analytic|, floor).

    The step is relative, ``h_i = step * max(1, |x_i|)``.  ``stencil=4`` uses
    the fourth-order five-point central difference.
    """
    x = np.asarray(x, dtype=float)
    _, g = fun(x)
    g = np.asarray(g, dtype=float)
    worst = 0.0
    for i in range(x.size):
        h = step * max(1.0, abs(x[i]))
        e = np.zeros_like(x)
        e[i] = h

        def f(dx):
            return float(fun(x + dx)[0])

        if stencil == 4:
            fd = (-f(2 * e) + 8 * f(e) - 8 * f(-e) + f(-2 * e)) / (12 * h)
        else:
            fd = (f(e) - f(-e)) / (2 * h)
        denom = max(abs(fd), abs(g[i]), floor)
        worst = max(worst, abs(fd - g[i]) / denom)
    return worst

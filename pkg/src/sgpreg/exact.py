"""Full Gaussian process regression: the exact log marginal likelihood and predictive."""

from __future__ import annotations

from dataclasses import dataclass

import jax
import jax.numpy as jnp
import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular

from .kernels import JITTER, KernelSpec, _check_inputs, gram, kern

LOG2PI = np.log(2.0 * np.pi)


class SingularCovarianceError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class GprModel:
    kernel: KernelSpec
    beta: float
    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        (X,) = _check_inputs(self.kernel, self.X)
        y = np.asarray(self.y, dtype=float).ravel()
        if not self.beta > 0:
            raise ValueError("noise precision beta must be positive")
        if X.shape[0] < 1 or X.shape[0] != y.size:
            raise ValueError("X and y must have the same, non-zero number of rows")
        if not np.all(np.isfinite(y)):
            raise ValueError("y contains non-finite values")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "beta", float(self.beta))


def _chol_noisy(K, noise_var, variance):
    n = K.shape[0]
    C = K + noise_var * np.eye(n)
    # the noise term already regularizes; jitter is only a fallback
    for extra in (0.0, JITTER, 1e2 * JITTER, 1e4 * JITTER):
        try:
            return cholesky(C + extra * variance * np.eye(n), lower=True)
        except np.linalg.LinAlgError:
            continue
    raise SingularCovarianceError("K_nn + beta^-1 I is not positive definite even with jitter")


def log_marginal_l0(model: GprModel) -> float:
    """log N(y | 0, K_nn + beta^-1 I)."""
    K = gram(model.kernel, model.X, model.X)
    L = _chol_noisy(K, 1.0 / model.beta, model.kernel.variance)
    a = solve_triangular(L, model.y, lower=True)
    n = model.y.size
    return float(-0.5 * a @ a - np.sum(np.log(np.diag(L))) - 0.5 * n * LOG2PI)


def l0_jax(params, X, y, family):
    """Differentiable twin of :func:`log_marginal_l0` over log-parameters."""
    K = kern(family, params["log_variance"], params["log_lengthscales"], X, X)
    n = y.shape[0]
    C = K + jnp.exp(-params["log_beta"]) * jnp.eye(n)
    L = jnp.linalg.cholesky(C)
    a = jax.scipy.linalg.solve_triangular(L, y, lower=True)
    return -0.5 * a @ a - jnp.sum(jnp.log(jnp.diag(L))) - 0.5 * n * LOG2PI


def gpr_params(model: GprModel) -> dict:
    return {
        "log_variance": np.float64(model.kernel.log_variance),
        "log_lengthscales": model.kernel.log_lengthscales,
        "log_beta": np.float64(np.log(model.beta)),
    }


def log_marginal_l0_grad(model: GprModel) -> dict:
    """Gradient of the exact log marginal likelihood w.r.t. log sigma^2, log l, log beta."""
    g = jax.grad(l0_jax)(gpr_params(model), model.X, model.y, model.kernel.family.value)
    return {k: np.asarray(v) for k, v in g.items()}


def predict_full(model: GprModel, Xstar, include_noise: bool = False):
    """Posterior mean and variance of the latent f at ``Xstar``.

    With ``include_noise`` the variance is for a new observation instead.
    """
    (Xstar,) = _check_inputs(model.kernel, Xstar)
    K = gram(model.kernel, model.X, model.X)
    L = _chol_noisy(K, 1.0 / model.beta, model.kernel.variance)
    Ks = gram(model.kernel, model.X, Xstar)
    alpha = cho_solve((L, True), model.y)
    mean = Ks.T @ alpha
    V = solve_triangular(L, Ks, lower=True)
    var = np.maximum(model.kernel.variance - np.sum(V**2, axis=0), 0.0)
    if include_noise:
        var = var + 1.0 / model.beta
    return mean, var

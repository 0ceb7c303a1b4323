"""Inducing-point objectives (SoR/DTC, FITC, SGPR, SVGP), predictions and error measures.

The four surrogate objectives share one Nystrom factorization
``Q = V^T V`` with ``V = chol(K_mm)^-1 K_mn``; no N x N matrix is formed.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from typing import Optional

import jax
import jax.numpy as jnp
import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular

from .exact import LOG2PI
from .kernels import JITTER, KernelFamily, KernelSpec, _check_inputs, gram, kern, kmm_jittered


class DegenerateInducingError(np.linalg.LinAlgError):
    """Raised when K_mm is numerically singular (e.g. duplicated inducing inputs)."""


class SgpKind(str, enum.Enum):
    SOR_DTC = "dtc"
    FITC = "fitc"
    SGPR = "sgpr"
    SVGP = "svgp"


@dataclass(frozen=True)
class SgpState:
    """Parameters of a sparse GP.

    ``vu_mean`` and ``vu_chol`` (lower-triangular factor of the
    variational covariance S) are only used by SVGP.
    """

    kind: SgpKind
    kernel: KernelSpec
    beta: float
    Z: np.ndarray
    vu_mean: Optional[np.ndarray] = None
    vu_chol: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", SgpKind(self.kind))
        (Z,) = _check_inputs(self.kernel, self.Z)
        object.__setattr__(self, "Z", Z)
        if Z.shape[0] < 1:
            raise ValueError("need at least one inducing input")
        if not self.beta > 0:
            raise ValueError("noise precision beta must be positive")
        object.__setattr__(self, "beta", float(self.beta))
        if self.kind is SgpKind.SVGP:
            M = Z.shape[0]
            m = np.zeros(M) if self.vu_mean is None else np.asarray(self.vu_mean, float).ravel()
            Lc = np.eye(M) if self.vu_chol is None else np.tril(np.asarray(self.vu_chol, float))
            if m.shape != (M,) or Lc.shape != (M, M):
                raise ValueError("vu_mean must be (M,) and vu_chol (M, M)")
            if not np.all(np.diag(Lc) > 0):
                raise ValueError("vu_chol must have a positive diagonal")
            object.__setattr__(self, "vu_mean", m)
            object.__setattr__(self, "vu_chol", Lc)

    @property
    def M(self) -> int:
        return self.Z.shape[0]

    @property
    def vu_cov(self) -> Optional[np.ndarray]:
        if self.vu_chol is None:
            return None
        return self.vu_chol @ self.vu_chol.T


# ---------------------------------------------------------------------------
# parameter packing
# ---------------------------------------------------------------------------


def chol_to_vec(L: np.ndarray) -> np.ndarray:
    rows, cols = np.tril_indices(L.shape[0])
    vals = L[rows, cols].copy()
    diag = rows == cols
    vals[diag] = np.log(vals[diag])
    return vals


def vec_to_chol(vec, M: int):
    rows, cols = np.tril_indices(M)
    vals = jnp.where(rows == cols, jnp.exp(vec), vec)
    return jnp.zeros((M, M), dtype=vals.dtype).at[rows, cols].set(vals)


def state_params(state: SgpState) -> dict:
    p = {
        "log_variance": np.float64(state.kernel.log_variance),
        "log_lengthscales": state.kernel.log_lengthscales.copy(),
        "log_beta": np.float64(np.log(state.beta)),
        "Z": state.Z.copy(),
    }
    if state.kind is SgpKind.SVGP:
        p["q_mu"] = state.vu_mean.copy()
        p["q_chol"] = chol_to_vec(state.vu_chol)
    return p


def state_from_params(kind, family, params: dict) -> SgpState:
    kind = SgpKind(kind)
    kernel = KernelSpec(family, float(np.exp(params["log_variance"])),
                        np.exp(np.asarray(params["log_lengthscales"])))
    extra = {}
    if kind is SgpKind.SVGP:
        M = np.asarray(params["Z"]).shape[0]
        extra = {"vu_mean": np.asarray(params["q_mu"]),
                 "vu_chol": np.asarray(vec_to_chol(jnp.asarray(params["q_chol"]), M))}
    return SgpState(kind, kernel, float(np.exp(params["log_beta"])), np.asarray(params["Z"]), **extra)


# ---------------------------------------------------------------------------
# jax objectives
# ---------------------------------------------------------------------------

_solve_tri = jax.scipy.linalg.solve_triangular


def _nystrom_factors(params, X, family, jitter=JITTER):
    lv, ll, Z = params["log_variance"], params["log_lengthscales"], params["Z"]
    L = jnp.linalg.cholesky(kmm_jittered(family, lv, ll, Z, jitter))
    V = _solve_tri(L, kern(family, lv, ll, Z, X), lower=True)
    kdiag = jnp.exp(lv) * jnp.ones(X.shape[0])
    return L, V, kdiag


def _lowrank_plus_diag_logpdf(V, lam, y):
    """log N(y | 0, V^T V + diag(lam)) via the matrix determinant lemma / Woodbury."""
    N = y.shape[0]
    Vl = V / lam
    A = jnp.eye(V.shape[0]) + Vl @ V.T
    LA = jnp.linalg.cholesky(A)
    c = _solve_tri(LA, Vl @ y, lower=True)
    logdet = jnp.sum(jnp.log(lam)) + 2.0 * jnp.sum(jnp.log(jnp.diag(LA)))
    quad = jnp.sum(y**2 / lam) - c @ c
    return -0.5 * (N * LOG2PI + logdet + quad)


def gauss_kl_to_prior(L, mean, Ls):
    """KL(N(mean, Ls Ls^T) || N(0, L L^T))."""
    M = L.shape[0]
    A = _solve_tri(L, Ls, lower=True)
    a = _solve_tri(L, mean, lower=True)
    return 0.5 * (jnp.sum(A**2) + a @ a - M
                  + 2.0 * jnp.sum(jnp.log(jnp.diag(L))) - 2.0 * jnp.sum(jnp.log(jnp.abs(jnp.diag(Ls)))))


def sgp_objective_jax(params, X, y, kind, family, jitter=JITTER):
    """Training objective l1 of the given kind as a differentiable function of ``params``.

    ``jitter`` scales the variance-relative ridge added to K_mm.
    """
    kind = SgpKind(kind)
    L, V, kdiag = _nystrom_factors(params, X, family, jitter)
    beta = jnp.exp(params["log_beta"])
    qdiag = jnp.sum(V**2, axis=0)
    N = y.shape[0]
    if kind is SgpKind.SOR_DTC:
        return _lowrank_plus_diag_logpdf(V, jnp.ones(N) / beta, y)
    if kind is SgpKind.FITC:
        return _lowrank_plus_diag_logpdf(V, kdiag - qdiag + 1.0 / beta, y)
    if kind is SgpKind.SGPR:
        return _lowrank_plus_diag_logpdf(V, jnp.ones(N) / beta, y) - 0.5 * beta * jnp.sum(kdiag - qdiag)
    # SVGP, full batch
    M = V.shape[0]
    Ls = vec_to_chol(params["q_chol"], M)
    W = _solve_tri(L.T, V, lower=False)  # K_mm^-1 K_mn
    f_mean = W.T @ params["q_mu"]
    f_var = kdiag - qdiag + jnp.sum((Ls.T @ W) ** 2, axis=0)
    expected = -0.5 * N * (LOG2PI - jnp.log(beta)) - 0.5 * beta * (jnp.sum((y - f_mean) ** 2) + jnp.sum(f_var))
    return expected - gauss_kl_to_prior(L, params["q_mu"], Ls)


_value_and_grad = jax.jit(jax.value_and_grad(sgp_objective_jax), static_argnums=(3, 4))
_value = jax.jit(sgp_objective_jax, static_argnums=(3, 4))


def _prepare(state: SgpState, X, y, check: bool = True):
    X, _ = _check_inputs(state.kernel, X, state.Z)
    y = np.asarray(y, dtype=float).ravel()
    if y.size != X.shape[0]:
        raise ValueError("X and y must have the same number of rows")
    if check:
        check_inducing(state.kernel, state.Z)
    return X, y


def check_inducing(kernel: KernelSpec, Z):
    """Reject inducing sets whose Gram matrix is numerically singular.

    Duplicated (or numerically coincident) inducing inputs make K_mm rank
    deficient; the test is on the spectrum rather than coordinate equality.
    """
    Kmm = gram(kernel, Z, Z)
    M = Kmm.shape[0]
    if M == 1:
        return
    eig_min = np.linalg.eigvalsh(Kmm)[0]
    if eig_min <= 1e2 * np.finfo(float).eps * np.trace(Kmm):
        raise DegenerateInducingError(
            f"K_mm is numerically singular (min eigenvalue {eig_min:.3e}); "
            "inducing inputs are (nearly) duplicated"
        )


def objective_l1(state: SgpState, X, y, check: bool = True) -> float:
    """Surrogate log marginal likelihood of the state's kind.

    With ``check=True`` the inducing set must pass :func:`check_inducing` and
    K_mm is then factorized without jitter (falling back to the training
    jitter if that fails).  ``check=False`` skips the guard and evaluates
    exactly the training objective, jitter included; coincident inducing
    inputs can arise during training.
    """
    X, y = _prepare(state, X, y, check)
    if check:
        L, _, V = _np_factors(state, X, 0.0)
        val = _np_objective(state, y, L, V)
    else:
        val = float(_value(state_params(state), X, y, state.kind.value, state.kernel.family.value))
    if not np.isfinite(val):
        raise DegenerateInducingError("objective is not finite; K_mm factorization failed")
    return val


def objective_grad(state: SgpState, X, y) -> dict:
    """Gradient of :func:`objective_l1` keyed by parameter name.

    Keys: ``log_variance``, ``log_lengthscales``, ``log_beta``, ``Z`` and,
    for SVGP, ``q_mu`` and ``q_chol`` (packed lower triangle, log diagonal).
    """
    X, y = _prepare(state, X, y)
    _, g = _value_and_grad(state_params(state), X, y, state.kind.value, state.kernel.family.value)
    return {k: np.asarray(v) for k, v in g.items()}


# ---------------------------------------------------------------------------
# prediction
# ---------------------------------------------------------------------------


def _np_factors(state: SgpState, X, jitter: float = JITTER):
    Kmm = gram(state.kernel, state.Z, state.Z)
    try:
        L = cholesky(Kmm + jitter * state.kernel.variance * np.eye(state.M), lower=True)
    except np.linalg.LinAlgError:
        L = cholesky(Kmm + JITTER * state.kernel.variance * np.eye(state.M), lower=True)
    Kmn = gram(state.kernel, state.Z, X)
    V = solve_triangular(L, Kmn, lower=True)
    return L, Kmn, V


def _np_objective(state: SgpState, y, L, V) -> float:
    # numpy twin of sgp_objective_jax for a given K_mm factor
    beta, var, N = state.beta, state.kernel.variance, y.size
    qdiag = np.sum(V**2, axis=0)
    if state.kind is SgpKind.SVGP:
        Ls = state.vu_chol
        W = solve_triangular(L.T, V, lower=False)
        resid = y - W.T @ state.vu_mean
        f_var = var - qdiag + np.sum((Ls.T @ W) ** 2, axis=0)
        expected = -0.5 * N * (LOG2PI - np.log(beta)) - 0.5 * beta * (resid @ resid + np.sum(f_var))
        A = solve_triangular(L, Ls, lower=True)
        a = solve_triangular(L, state.vu_mean, lower=True)
        kl = 0.5 * (np.sum(A**2) + a @ a - state.M + 2.0 * np.sum(np.log(np.diag(L)))
                    - 2.0 * np.sum(np.log(np.abs(np.diag(Ls)))))
        return float(expected - kl)
    lam = np.full(N, 1.0 / beta)
    if state.kind is SgpKind.FITC:
        lam = lam + var - qdiag
    Vl = V / lam
    LA = cholesky(np.eye(V.shape[0]) + Vl @ V.T, lower=True)
    c = solve_triangular(LA, Vl @ y, lower=True)
    logdet = np.sum(np.log(lam)) + 2.0 * np.sum(np.log(np.diag(LA)))
    val = -0.5 * (N * LOG2PI + logdet + np.sum(y**2 / lam) - c @ c)
    if state.kind is SgpKind.SGPR:
        val -= 0.5 * beta * np.sum(var - qdiag)
    return float(val)


def optimal_qu(state: SgpState, X, y):
    """Optimal Gaussian q(u) = N(m, S) for fixed kernel, beta and Z.

    Returns ``(m, chol(S))``; at this q(u) the SVGP bound equals the SGPR one.
    """
    X, y = _prepare(state, X, y)
    L, Kmn, V = _np_factors(state, X)
    B = np.eye(state.M) + state.beta * V @ V.T
    LB = cholesky(B, lower=True)
    # S = K_mm (K_mm + beta K_mn K_nm)^-1 K_mm = L B^-1 L^T
    LS = L @ solve_triangular(LB, np.eye(state.M), lower=True).T
    S = LS @ LS.T
    m = state.beta * L @ cho_solve((LB, True), V @ y)
    return m, cholesky(0.5 * (S + S.T), lower=True)


def predict_sgp(state: SgpState, X, y, Xstar, include_noise: bool = False, check: bool = True):
    """Predictive mean and latent variance; the mean is ``k_Z(x*) @ c``.

    Returns ``(mean, var, c)``.  A K_mm that passed the conditioning check
    is factorized without jitter; ``check=False`` uses the training jitter.
    """
    X, y = _prepare(state, X, y, check)
    (Xstar,) = _check_inputs(state.kernel, Xstar)
    L, Kmn, V = _np_factors(state, X, 0.0 if check else JITTER)
    Ksm = gram(state.kernel, Xstar, state.Z)
    Vs = solve_triangular(L, Ksm.T, lower=True)
    prior_minus_q = state.kernel.variance - np.sum(Vs**2, axis=0)

    if state.kind is SgpKind.SVGP:
        c = cho_solve((L, True), state.vu_mean)
        extra = np.sum((state.vu_chol.T @ cho_solve((L, True), Ksm.T)) ** 2, axis=0)
    else:
        if state.kind is SgpKind.FITC:
            lam = np.maximum(state.kernel.variance - np.sum(V**2, axis=0), 0.0) + 1.0 / state.beta
        else:
            lam = np.full(X.shape[0], 1.0 / state.beta)
        # Sigma = (K_mm + K_mn Lam^-1 K_nm)^-1 = L^-T B^-1 L^-1
        B = np.eye(state.M) + (V / lam) @ V.T
        LB = cholesky(B, lower=True)
        c = solve_triangular(L.T, cho_solve((LB, True), (V / lam) @ y), lower=False)
        extra = np.sum(solve_triangular(LB, Vs, lower=True) ** 2, axis=0)

    mean = Ksm @ c
    var = np.maximum(prior_minus_q + extra, 0.0)
    if include_noise:
        var = var + 1.0 / state.beta
    return mean, var, c


# ---------------------------------------------------------------------------
# approximation error measures
# ---------------------------------------------------------------------------


def nystrom_error(kernel: KernelSpec, X, Z, block: int = 1024) -> float:
    """Frobenius norm of K_nn - Q, accumulated over row blocks of size ``block``."""
    X, Z = _check_inputs(kernel, X, Z)
    if Z.shape[0] < 1:
        raise ValueError("need at least one inducing input")
    Kmm = gram(kernel, Z, Z) + JITTER * kernel.variance * np.eye(Z.shape[0])
    L = cholesky(Kmm, lower=True)
    V = solve_triangular(L, gram(kernel, Z, X), lower=True)
    total = 0.0
    for start in range(0, X.shape[0], block):
        rows = slice(start, start + block)
        R = gram(kernel, X[rows], X) - V[:, rows].T @ V
        total += float(np.sum(R**2))
    return math.sqrt(total)


def quantization_error(X, Z) -> float:
    """Sum of squared distances from each row of X to its nearest row of Z."""
    X = np.asarray(X, dtype=float)
    Z = np.asarray(Z, dtype=float)
    X = X[:, None] if X.ndim == 1 else X
    Z = Z[:, None] if Z.ndim == 1 else Z
    if Z.shape[0] < 1:
        raise ValueError("need at least one inducing input")
    if X.shape[1] != Z.shape[1]:
        raise ValueError("X and Z dimension mismatch")
    d2 = np.sum((X[:, None, :] - Z[None, :, :]) ** 2, axis=-1)
    return math.fsum(np.min(d2, axis=1))


def with_params(state: SgpState, **changes) -> SgpState:
    return replace(state, **changes)

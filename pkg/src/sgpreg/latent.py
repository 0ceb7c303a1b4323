"""Latent-variable sparse GPs (collapsed LSGPR and uncollapsed LSVGP).

Both bounds use SE-ARD psi-statistics under a diagonal Gaussian q(X) and a
standard normal prior p(X).  Also here: the regularized bound (MELBO), the
ASKL diagnostic, and the empirical-Bayes bounds that treat the inducing
inputs as random with q(z_m) = N(nu_m, eps I) and an empirical prior fitted
to the embedding means.
"""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import jax
import jax.numpy as jnp
import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular

from .exact import LOG2PI
from .kernels import JITTER, KernelFamily, KernelSpec, gram, kmm_jittered, kern, psi_seard
from .regularizer import (
    Direction,
    ObjectiveBreakdown,
    divergence_jax,
    fit_gaussian_summary,
    kl_gaussian,
    summary_jax,
)
from .sparse import DegenerateInducingError, chol_to_vec, gauss_kl_to_prior, vec_to_chol

_solve_tri = jax.scipy.linalg.solve_triangular


class LvmKind(str, enum.Enum):
    LSGPR = "lsgpr"
    LSVGP = "lsvgp"


class PreconditionError(ValueError):
    pass


@dataclass(frozen=True)
class LvmState:
    """Variational state of a latent sparse GP.

    ``q_U_means`` is M x D and ``q_U_chols`` D x M x M (lower triangular);
    both are only needed by LSVGP.  The prior on X is fixed to N(0, I).
    """

    kernel: KernelSpec
    beta: float
    q_X_means: np.ndarray
    q_X_vars: np.ndarray
    Z: np.ndarray
    q_U_means: Optional[np.ndarray] = None
    q_U_chols: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kernel.family is not KernelFamily.SEARD:
            raise ValueError("latent models use the SE-ARD kernel")
        mu = np.atleast_2d(np.asarray(self.q_X_means, float))
        S = np.asarray(self.q_X_vars, float).reshape(mu.shape)
        Z = np.atleast_2d(np.asarray(self.Z, float))
        Q = mu.shape[1]
        if Z.shape[1] != Q or self.kernel.lengthscales.size != Q:
            raise ValueError("latent dimension mismatch between q(X), Z and kernel")
        if not np.all(S > 0):
            raise ValueError("q(X) variances must be positive")
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        object.__setattr__(self, "q_X_means", mu)
        object.__setattr__(self, "q_X_vars", S)
        object.__setattr__(self, "Z", Z)
        object.__setattr__(self, "beta", float(self.beta))
        if self.q_U_means is not None:
            m = np.asarray(self.q_U_means, float)
            Ls = np.tril(np.asarray(self.q_U_chols, float))
            if m.ndim != 2 or m.shape[0] != Z.shape[0] or Ls.shape != (m.shape[1], Z.shape[0], Z.shape[0]):
                raise ValueError("q(U) shapes must be (M, D) and (D, M, M)")
            object.__setattr__(self, "q_U_means", m)
            object.__setattr__(self, "q_U_chols", Ls)

    @property
    def N(self) -> int:
        return self.q_X_means.shape[0]

    @property
    def Q(self) -> int:
        return self.q_X_means.shape[1]

    @property
    def M(self) -> int:
        return self.Z.shape[0]


@dataclass(frozen=True)
class EbState:
    nu: np.ndarray
    epsilon: float
    K1: float
    K2: float

    def __post_init__(self):
        object.__setattr__(self, "nu", np.atleast_2d(np.asarray(self.nu, float)))
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not 0 < self.K1 < self.K2:
            raise ValueError("need 0 < K1 < K2")


# ---------------------------------------------------------------------------
# packing
# ---------------------------------------------------------------------------


def lvm_params(state: LvmState, kind=LvmKind.LSVGP) -> dict:
    p = {
        "log_variance": np.float64(state.kernel.log_variance),
        "log_lengthscales": state.kernel.log_lengthscales.copy(),
        "log_beta": np.float64(np.log(state.beta)),
        "Z": state.Z.copy(),
        "q_mu": state.q_X_means.copy(),
        "q_log_var": np.log(state.q_X_vars),
    }
    if LvmKind(kind) is LvmKind.LSVGP:
        if state.q_U_means is None:
            raise ValueError("LSVGP needs q(U) parameters")
        p["u_mean"] = state.q_U_means.copy()
        p["u_chol"] = np.stack([chol_to_vec(L) for L in state.q_U_chols])
    return p


def lvm_from_params(params: dict) -> LvmState:
    kernel = KernelSpec(KernelFamily.SEARD, float(np.exp(params["log_variance"])),
                        np.exp(np.asarray(params["log_lengthscales"])))
    extra = {}
    if "u_mean" in params:
        M = np.asarray(params["Z"]).shape[0]
        chols = jax.vmap(lambda v: vec_to_chol(v, M))(jnp.asarray(params["u_chol"]))
        extra = {"q_U_means": np.asarray(params["u_mean"]), "q_U_chols": np.asarray(chols)}
    return LvmState(kernel, float(np.exp(params["log_beta"])), np.asarray(params["q_mu"]),
                    np.exp(np.asarray(params["q_log_var"])), np.asarray(params["Z"]), **extra)


# ---------------------------------------------------------------------------
# jax bounds
# ---------------------------------------------------------------------------


def kl_qx_jax(mu, log_var):
    return 0.5 * jnp.sum(mu**2 + jnp.exp(log_var) - 1.0 - log_var)


def _stats(params, Z=None):
    Z = params["Z"] if Z is None else Z
    lv, ll = params["log_variance"], params["log_lengthscales"]
    psi0, psi1, psi2 = psi_seard(lv, ll, params["q_mu"], jnp.exp(params["q_log_var"]), Z)
    L = jnp.linalg.cholesky(kmm_jittered("seard", lv, ll, Z))
    return psi0, psi1, psi2, L


def elbo_lsgpr_jax(params, Y):
    N, D = Y.shape
    psi0, psi1, psi2, L = _stats(params)
    beta = jnp.exp(params["log_beta"])
    M = L.shape[0]
    A = _solve_tri(L, _solve_tri(L, psi2, lower=True).T, lower=True)  # L^-1 psi2 L^-T
    B = jnp.eye(M) + beta * A
    LB = jnp.linalg.cholesky(B)
    c = _solve_tri(LB, _solve_tri(L, psi1.T @ Y, lower=True), lower=True)
    bound = (-0.5 * N * D * (LOG2PI - jnp.log(beta))
             - D * jnp.sum(jnp.log(jnp.diag(LB)))
             - 0.5 * beta * jnp.sum(Y**2)
             + 0.5 * beta**2 * jnp.sum(c**2)
             - 0.5 * beta * D * psi0
             + 0.5 * beta * D * jnp.trace(A))
    return bound - kl_qx_jax(params["q_mu"], params["q_log_var"])


def expected_loglik_lsvgp(params, Y, Z=None):
    """E_{q(X) q(F|U) q(U)} log p(Y|F), summed over rows and outputs."""
    N, D = Y.shape
    psi0, psi1, psi2, L = _stats(params, Z)
    beta = jnp.exp(params["log_beta"])
    M = L.shape[0]
    Um = params["u_mean"]
    chols = jax.vmap(lambda v: vec_to_chol(v, M))(params["u_chol"])
    S_sum = jnp.einsum("dij,dkj->ik", chols, chols)
    Kinv = jax.scipy.linalg.cho_solve((L, True), jnp.eye(M))
    P = Kinv @ psi1.T  # M x N
    G = Kinv @ psi2 @ Kinv
    sq = (jnp.sum(Y**2) - 2.0 * jnp.sum(Y * (P.T @ Um))
          + jnp.sum(Um * (G @ Um)) + jnp.sum(G * S_sum)
          + D * (psi0 - jnp.sum(Kinv * psi2)))
    return -0.5 * N * D * (LOG2PI - jnp.log(beta)) - 0.5 * beta * sq, L, chols


def elbo_lsvgp_jax(params, Y):
    M = params["Z"].shape[0]
    expected, L, chols = expected_loglik_lsvgp(params, Y)
    kl_u = jnp.sum(jax.vmap(lambda m, Ls: gauss_kl_to_prior(L, m, Ls))(params["u_mean"].T, chols))
    return expected - kl_u - kl_qx_jax(params["q_mu"], params["q_log_var"])


def elbo_jax(params, Y, kind):
    if LvmKind(kind) is LvmKind.LSGPR:
        return elbo_lsgpr_jax(params, Y)
    return elbo_lsvgp_jax(params, Y)


def melbo_jax(params, Y, lam, kind, direction):
    return elbo_jax(params, Y, kind) - lam * divergence_jax(params["q_mu"], params["Z"], direction)


_elbo = jax.jit(elbo_jax, static_argnums=(2,))
_melbo_parts = jax.jit(
    lambda p, Y, kind, direction: (elbo_jax(p, Y, kind), divergence_jax(p["q_mu"], p["Z"], direction)),
    static_argnums=(2, 3),
)


def _check_Y(state: LvmState, Y):
    Y = np.atleast_2d(np.asarray(Y, float))
    if Y.shape[0] != state.N:
        raise ValueError("Y rows must match q(X) rows")
    if not np.all(np.isfinite(Y)):
        raise ValueError("Y contains non-finite values")
    if state.Q > Y.shape[1]:
        warnings.warn(f"latent dimension Q={state.Q} exceeds output dimension D={Y.shape[1]}")
    return Y


def _finite(val, what="bound"):
    val = float(val)
    if not np.isfinite(val):
        raise DegenerateInducingError(f"{what} is not finite; K_mm factorization failed")
    return val


def elbo_lsgpr(state: LvmState, Y) -> float:
    """Collapsed lower bound on log p(Y) with q(U) marginalized optimally."""
    Y = _check_Y(state, Y)
    return _finite(_elbo(lvm_params(state, LvmKind.LSGPR), Y, "lsgpr"))


def elbo_lsvgp(state: LvmState, Y) -> float:
    """Uncollapsed lower bound with an explicit Gaussian q(u_d) per output."""
    Y = _check_Y(state, Y)
    return _finite(_elbo(lvm_params(state, LvmKind.LSVGP), Y, "lsvgp"))


def melbo(state: LvmState, Y, lam: float, direction="xz", kind="lsvgp") -> ObjectiveBreakdown:
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    Y = _check_Y(state, Y)
    elbo, div = _melbo_parts(lvm_params(state, kind), Y, LvmKind(kind).value, Direction(direction).value)
    elbo, div = _finite(elbo), max(float(div), 0.0)
    return ObjectiveBreakdown(elbo, div, float(lam), elbo - float(lam) * div)


def optimal_qu(state: LvmState, Y):
    """Closed-form optimal q(u_d); returns (means M x D, chols D x M x M)."""
    Y = _check_Y(state, Y)
    stats_ = _np_stats(state)
    psi1, psi2, L = stats_["psi1"], stats_["psi2"], stats_["L"]
    M = state.M
    A = solve_triangular(L, solve_triangular(L, psi2, lower=True).T, lower=True)
    LB = cholesky(np.eye(M) + state.beta * 0.5 * (A + A.T), lower=True)
    LS = L @ solve_triangular(LB, np.eye(M), lower=True).T
    S = LS @ LS.T
    chol_S = cholesky(0.5 * (S + S.T), lower=True)
    means = state.beta * L @ cho_solve((LB, True), solve_triangular(L, psi1.T @ Y, lower=True))
    return means, np.repeat(chol_S[None], Y.shape[1], axis=0)


def _np_stats(state: LvmState):
    psi0, psi1, psi2 = psi_seard(state.kernel.log_variance, state.kernel.log_lengthscales,
                                 state.q_X_means, state.q_X_vars, state.Z)
    Kmm = gram(state.kernel, state.Z, state.Z) + JITTER * state.kernel.variance * np.eye(state.M)
    psi2 = np.asarray(psi2)
    return {"psi0": float(psi0), "psi1": np.asarray(psi1), "psi2": 0.5 * (psi2 + psi2.T),
            "L": cholesky(Kmm, lower=True)}


def reconstruct(state: LvmState, Y, kind="lsvgp", Xhat=None) -> np.ndarray:
    """Posterior mean of F at the embedding means (or at ``Xhat``)."""
    Xhat = state.q_X_means if Xhat is None else np.atleast_2d(Xhat)
    Ksm = gram(state.kernel, Xhat, state.Z)
    if LvmKind(kind) is LvmKind.LSVGP:
        L = _np_stats(state)["L"]
        C = cho_solve((L, True), state.q_U_means)
    else:
        Y = _check_Y(state, Y)
        st = _np_stats(state)
        L = st["L"]
        # c = beta (K_mm + beta psi2)^-1 psi1^T Y
        C = state.beta * cho_solve((cholesky(L @ L.T + state.beta * st["psi2"], lower=True), True), st["psi1"].T @ Y)
    return Ksm @ C


def askl(X_hat, Z) -> float:
    """Average over latent dimensions of the symmetrized KL between 1-D Gaussian fits."""
    X_hat = np.atleast_2d(np.asarray(X_hat, float))
    Z = np.atleast_2d(np.asarray(Z, float))
    if X_hat.shape[1] != Z.shape[1]:
        raise ValueError("X_hat and Z must have the same number of columns")
    total = 0.0
    for q in range(X_hat.shape[1]):
        px = fit_gaussian_summary(X_hat[:, q])
        pz = fit_gaussian_summary(Z[:, q])
        total += 0.5 * kl_gaussian(px, pz) + 0.5 * kl_gaussian(pz, px)
    return total / X_hat.shape[1]


# ---------------------------------------------------------------------------
# empirical-Bayes bounds
# ---------------------------------------------------------------------------


def kl_quadratic_expansion_jax(z, mu):
    """``M * KL(q_z || q_mu)`` written as a sum of per-point quadratic forms.

    With ML covariances the KL between the two fitted Gaussians expands to
    ``M/2 (log|S_mu| - log|S_z| - Q) + 1/2 sum_m (z_m - m_mu)^T S_mu^-1 (z_m - m_mu)``;
    the ridge added to S_z contributes the extra ``M/2 delta_z tr(S_mu^-1)``.
    Returns ``(expansion_without_ridge, ridge_term)``.
    """
    M, Q = z.shape
    m_mu, S_mu = summary_jax(mu)
    _, S_z = summary_jax(z)
    L_mu = jnp.linalg.cholesky(S_mu)
    r = _solve_tri(L_mu, (z - m_mu).T, lower=True)
    logdet_mu = 2.0 * jnp.sum(jnp.log(jnp.diag(L_mu)))
    logdet_z = jnp.linalg.slogdet(S_z)[1]
    core = 0.5 * M * (logdet_mu - logdet_z - Q) + 0.5 * jnp.sum(r**2)
    n_z = z.shape[0]
    cz = z - jnp.mean(z, axis=0)
    delta_z = jnp.diag(S_z) - jnp.diag(cz.T @ cz / n_z)
    Sinv_diag = jnp.diag(jax.scipy.linalg.cho_solve((L_mu, True), jnp.eye(Q)))
    ridge = 0.5 * M * jnp.sum(delta_z * Sinv_diag)
    return core, ridge


def kl_quadratic_expansion(z, mu) -> tuple[float, float]:
    core, ridge = kl_quadratic_expansion_jax(jnp.asarray(np.atleast_2d(z), float),
                                             jnp.asarray(np.atleast_2d(mu), float))
    return float(core), float(ridge)


def _eb_terms(params, eps, K2):
    """A, B, C and the exact KL(q(Z) || p(Z)); ``params["Z"]`` holds nu."""
    nu, mu = params["Z"], params["q_mu"]
    M, Q = nu.shape
    m_mu, S_mu = summary_jax(mu)
    L_mu = jnp.linalg.cholesky(S_mu)
    logdet_mu = 2.0 * jnp.sum(jnp.log(jnp.diag(L_mu)))
    _, S_nu = summary_jax(nu)
    logdet_nu = jnp.linalg.slogdet(S_nu)[1]
    quad = jnp.sum(_solve_tri(L_mu, (nu - m_mu).T, lower=True) ** 2)
    tr_inv = jnp.trace(jax.scipy.linalg.cho_solve((L_mu, True), jnp.eye(Q)))

    A = 0.5 * M * (logdet_mu - logdet_nu - Q) + 0.5 * quad
    B = 0.5 * M * (Q * jnp.log(eps) - jnp.log(K2))
    C = 0.5 * M * eps * tr_inv
    # sum_m KL(N(nu_m, eps I) || N(m_mu, S_mu))
    kl_z = 0.5 * M * (logdet_mu - Q - Q * jnp.log(eps)) + 0.5 * quad + C
    return A, B, C, kl_z, logdet_nu


def eb_objective_jax(params, Y, eps, K2, xi=None):
    """Returns (elbo_eb, lelbo_eb, A, B, C).

    ``xi`` (S x M x Q standard normals) switches the expected log-likelihood
    from the plug-in value at Z = nu to an antithetic Monte Carlo average
    over q(Z).
    """
    nu = params["Z"]
    if xi is None:
        expected, L, chols = expected_loglik_lsvgp(params, Y, nu)
    else:
        sd = jnp.sqrt(eps)
        f = lambda z: expected_loglik_lsvgp(params, Y, z)[0]
        vals = jax.vmap(lambda e: 0.5 * (f(nu + sd * e) + f(nu - sd * e)))(xi)
        expected = jnp.mean(vals)
        _, L, chols = expected_loglik_lsvgp(params, Y, nu)
    kl_u = jnp.sum(jax.vmap(lambda m, Ls: gauss_kl_to_prior(L, m, Ls))(params["u_mean"].T, chols))
    kl_x = kl_qx_jax(params["q_mu"], params["q_log_var"])
    A, B, C, kl_z, _ = _eb_terms(params, eps, K2)
    base = expected - kl_x - kl_u
    return base - kl_z, base - A + B - C, A, B, C


def eb_params(state: LvmState, eb: EbState) -> dict:
    p = lvm_params(state, LvmKind.LSVGP)
    if eb.nu.shape != state.Z.shape:
        raise ValueError("nu must have the same shape as Z")
    p["Z"] = eb.nu.copy()
    return p


def check_eb_precondition(eb: EbState) -> float:
    det_nu = float(np.linalg.det(fit_gaussian_summary(eb.nu).cov))
    if not eb.K1 < det_nu < eb.K2:
        raise PreconditionError(f"|Sigma_nu| = {det_nu:.6g} is outside (K1, K2) = ({eb.K1}, {eb.K2})")
    return det_nu


def _mc_draws(n_mc, shape, seed):
    if not n_mc:
        return None
    return np.random.default_rng(seed).standard_normal((n_mc,) + tuple(shape))


def eb_bounds(state: LvmState, eb: EbState, Y, n_mc: int = 0, seed: int = 0):
    """Empirical-Bayes lower bound and its looser, MELBO-shaped relaxation.

    Returns ``(elbo_eb, lelbo_eb, A, B, C)`` with
    ``lelbo_eb = E log p(Y|F) - KL_X - KL_U - A + B - C`` and
    ``0 <= elbo_eb - lelbo_eb = M/2 (log K2 - log|Sigma_nu|) < M/2 (log K2 - log K1)``.
    """
    Y = _check_Y(state, Y)
    check_eb_precondition(eb)
    xi = _mc_draws(n_mc, eb.nu.shape, seed)
    out = jax.jit(eb_objective_jax)(eb_params(state, eb), Y, eb.epsilon, eb.K2, xi)
    return tuple(_finite(v, "empirical-Bayes bound") for v in out)


def eb_melbo_discrepancy(state: LvmState, eb: EbState, Y, eps_sequence: Sequence[float],
                         n_mc: int = 0, seed: int = 0) -> np.ndarray:
    """|LELBO_EB(eps) - B(eps) - MELBO(lam=M, KL(q_z||q_x))| at Z = nu, per eps.

    B only depends on eps and K2, so it is dropped as a constant.  With the
    plug-in likelihood the discrepancy is C minus the summary-ridge term and
    shrinks linearly in eps.
    """
    Y = _check_Y(state, Y)
    check_eb_precondition(eb)
    params = eb_params(state, eb)
    M = state.M
    target = float(melbo_jax(params, Y, float(M), "lsvgp", "zx"))
    xi = _mc_draws(n_mc, eb.nu.shape, seed)
    fn = jax.jit(eb_objective_jax)
    out = []
    for eps in eps_sequence:
        _, lelbo, _, B, _ = fn(params, Y, float(eps), eb.K2, xi)
        out.append(abs(float(lelbo) - float(B) - target))
    return np.array(out)

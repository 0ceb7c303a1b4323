"""Divergence regularization of inducing-input placement.

Both the data inputs X and the inducing inputs Z are summarized by a
Gaussian (sample mean, maximum-likelihood covariance), and the surrogate
objective is penalized by a KL divergence between the two summaries::

    total = recon - lam * KL(.||.)

The jax functions ``summary_jax`` / ``kl_jax`` are used inside training
objectives so the penalty is differentiable in Z.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import jax.numpy as jnp
import numpy as np

# relative ridge added to fitted covariances: delta = SUMMARY_JITTER * max(trace/d, 1)
SUMMARY_JITTER = 1e-6


class Direction(str, enum.Enum):
    XZ = "xz"  # KL(q_x || q_z)
    ZX = "zx"  # KL(q_z || q_x)


@dataclass(frozen=True)
class GaussianSummary:
    mean: np.ndarray
    cov: np.ndarray
    count: int
    jitter_applied: float

    @property
    def dim(self) -> int:
        return self.mean.size


@dataclass(frozen=True)
class ObjectiveBreakdown:
    recon: float
    divergence: float
    lam: float
    total: float

    def as_dict(self) -> dict:
        return {"recon": self.recon, "divergence": self.divergence, "lambda": self.lam, "total": self.total}


def _as_points(points) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    if pts.ndim != 2 or pts.size == 0:
        raise ValueError("need a non-empty (n, d) array of points")
    return pts


def summary_jax(points):
    n, d = points.shape
    mean = jnp.mean(points, axis=0)
    centered = points - mean
    cov = centered.T @ centered / n
    delta = SUMMARY_JITTER * jnp.maximum(jnp.trace(cov) / d, 1.0)
    return mean, cov + delta * jnp.eye(d)


def kl_jax(m0, S0, m1, S1):
    """KL(N(m0, S0) || N(m1, S1)) via Cholesky factors."""
    d = m0.shape[0]
    L0 = jnp.linalg.cholesky(S0)
    L1 = jnp.linalg.cholesky(S1)
    A = jnp.linalg.solve(L1, L0)
    b = jnp.linalg.solve(L1, m1 - m0)
    logdet = 2.0 * (jnp.sum(jnp.log(jnp.diag(L1))) - jnp.sum(jnp.log(jnp.diag(L0))))
    return 0.5 * (jnp.sum(A**2) + b @ b - d + logdet)


def divergence_jax(Xref, Z, direction):
    mx, Sx = summary_jax(Xref)
    mz, Sz = summary_jax(Z)
    if Direction(direction) is Direction.XZ:
        return kl_jax(mx, Sx, mz, Sz)
    return kl_jax(mz, Sz, mx, Sx)


def fit_gaussian_summary(points) -> GaussianSummary:
    """Sample mean and ML covariance (divide by n) plus a small ridge."""
    pts = _as_points(points)
    n, d = pts.shape
    mean = pts.mean(axis=0)
    centered = pts - mean
    cov = centered.T @ centered / n
    delta = SUMMARY_JITTER * max(np.trace(cov) / d, 1.0)
    return GaussianSummary(mean, cov + delta * np.eye(d), n, float(delta))


def kl_gaussian(p: GaussianSummary, q: GaussianSummary) -> float:
    """KL(p || q) for two Gaussian summaries."""
    if p.dim != q.dim:
        raise ValueError(f"dimension mismatch: {p.dim} vs {q.dim}")
    val = float(kl_jax(p.mean, p.cov, q.mean, q.cov))
    return max(val, 0.0)


def regularized_objective(recon: float, Xref, Z, lam: float, direction="xz") -> ObjectiveBreakdown:
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    sx = fit_gaussian_summary(Xref)
    sz = fit_gaussian_summary(Z)
    if Direction(direction) is Direction.XZ:
        div = kl_gaussian(sx, sz)
    else:
        div = kl_gaussian(sz, sx)
    return ObjectiveBreakdown(float(recon), div, float(lam), float(recon) - float(lam) * div)


# ---------------------------------------------------------------------------
# natural parameters and the convexity probe
# ---------------------------------------------------------------------------


def to_natural(mean, cov) -> np.ndarray:
    """Natural parameters (Sigma^-1 mu, -1/2 Sigma^-1) flattened to a vector."""
    mean = np.asarray(mean, float)
    P = np.linalg.inv(np.asarray(cov, float))
    P = 0.5 * (P + P.T)
    return np.concatenate([P @ mean, (-0.5 * P).ravel()])


def from_natural(eta) -> tuple[np.ndarray, np.ndarray]:
    eta = np.asarray(eta, float)
    d = int(round((-1 + np.sqrt(1 + 4 * eta.size)) / 2))
    eta1, eta2 = eta[:d], eta[d:].reshape(d, d)
    P = -2.0 * 0.5 * (eta2 + eta2.T)
    cov = np.linalg.inv(P)
    return cov @ eta1, 0.5 * (cov + cov.T)


def is_feasible(eta) -> bool:
    eta = np.asarray(eta, float)
    d = int(round((-1 + np.sqrt(1 + 4 * eta.size)) / 2))
    eta2 = eta[d:].reshape(d, d)
    try:
        np.linalg.cholesky(-(eta2 + eta2.T))
        return True
    except np.linalg.LinAlgError:
        return False


def kl_to_natural(p: GaussianSummary, eta) -> float:
    """KL(p || q(eta)) evaluated without clamping (for curvature probing)."""
    m, S = from_natural(eta)
    return float(kl_jax(p.mean, p.cov, m, S))


@dataclass(frozen=True)
class ProbeResult:
    min_second_difference: float
    steps: np.ndarray
    shrinks: int

    def __float__(self):
        return self.min_second_difference


def _random_symmetric_direction(rng, d):
    v1 = rng.normal(size=d)
    B = rng.normal(size=(d, d))
    return np.concatenate([v1, (0.5 * (B + B.T)).ravel()])


def kl_convexity_probe(p_fixed: GaussianSummary, eta_z, n_directions: int = 20,
                       step: float = 1e-2, seed: int = 0) -> ProbeResult:
    """Minimum directional second difference of eta -> KL(p_fixed || q(eta)).

    Each random direction is normalized relative to ``|eta|`` and the step is
    halved until both ``eta +/- h v`` describe valid Gaussians.  A minimum
    that is >= -1e-8 is numerical evidence of local convexity.
    """
    eta_z = np.asarray(eta_z, float)
    if not is_feasible(eta_z):
        raise ValueError("eta_z does not correspond to a valid Gaussian")
    rng = np.random.default_rng(seed)
    d = p_fixed.dim
    f0 = kl_to_natural(p_fixed, eta_z)
    scale = max(np.linalg.norm(eta_z), 1.0)
    worst = np.inf
    steps = np.empty(n_directions)
    shrinks = 0
    for i in range(n_directions):
        v = _random_symmetric_direction(rng, d)
        v *= scale / np.linalg.norm(v)
        h = step
        while not (is_feasible(eta_z + h * v) and is_feasible(eta_z - h * v)):
            h *= 0.5
            shrinks += 1
            if h < 1e-12:
                raise RuntimeError("could not find a feasible step along the probe direction")
        fp = kl_to_natural(p_fixed, eta_z + h * v)
        fm = kl_to_natural(p_fixed, eta_z - h * v)
        worst = min(worst, (fp - 2.0 * f0 + fm) / h**2)
        steps[i] = h
    return ProbeResult(float(worst), steps, shrinks)


def midpoint_convexity_gap(p_fixed: GaussianSummary, eta_a, eta_b) -> float:
    """``(f(a) + f(b))/2 - f((a + b)/2)``; non-negative for a convex f."""
    fa = kl_to_natural(p_fixed, eta_a)
    fb = kl_to_natural(p_fixed, eta_b)
    fm = kl_to_natural(p_fixed, 0.5 * (np.asarray(eta_a) + np.asarray(eta_b)))
    return 0.5 * (fa + fb) - fm

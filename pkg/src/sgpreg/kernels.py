"""Stationary kernels, their analytic derivatives and SE-ARD psi-statistics.

Two families are supported: an isotropic Matern-3/2 kernel and a squared
exponential kernel with one lengthscale per input dimension (ARD).  The
``k_*`` functions operate on log-parameters and are written with
``jax.numpy`` so the objectives built on top of them can be differentiated;
the public helpers (``gram``, ``gram_grad``, ``psi_stats``) take and return
plain numpy arrays.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import jax
import jax.numpy as jnp
import numpy as np
from scipy.spatial.distance import cdist

SQRT3 = np.sqrt(3.0)

# relative to the signal variance
JITTER = 1e-8

# rows of q(X) processed per block when accumulating psi2
PSI2_CHUNK = 512


class KernelFamily(str, enum.Enum):
    MATERN32 = "matern32"
    SEARD = "seard"


@dataclass(frozen=True)
class KernelSpec:
    """Kernel family plus positive hyperparameters.

    ``lengthscales`` has length 1 for Matern-3/2 (isotropic in any input
    dimension) and length Q for SE-ARD.
    """

    family: KernelFamily
    variance: float
    lengthscales: np.ndarray = field(default_factory=lambda: np.ones(1))

    def __post_init__(self):
        object.__setattr__(self, "family", KernelFamily(self.family))
        ls = np.atleast_1d(np.asarray(self.lengthscales, dtype=float))
        object.__setattr__(self, "lengthscales", ls)
        object.__setattr__(self, "variance", float(self.variance))
        if not self.variance > 0:
            raise ValueError(f"kernel variance must be positive, got {self.variance}")
        if ls.ndim != 1 or ls.size == 0 or not np.all(ls > 0):
            raise ValueError("lengthscales must be a non-empty vector of positive reals")
        if self.family is KernelFamily.MATERN32 and ls.size != 1:
            raise ValueError("Matern32 is isotropic and takes a single lengthscale")

    @property
    def log_variance(self) -> float:
        return float(np.log(self.variance))

    @property
    def log_lengthscales(self) -> np.ndarray:
        return np.log(self.lengthscales)

    def with_log_params(self, log_variance, log_lengthscales) -> "KernelSpec":
        return KernelSpec(self.family, float(np.exp(log_variance)), np.exp(np.asarray(log_lengthscales)))


# ---------------------------------------------------------------------------
# jax building blocks (log-parameterized)
# ---------------------------------------------------------------------------


def _scaled_sqdist(A, B, ls):
    diff = A[:, None, :] / ls - B[None, :, :] / ls
    return jnp.sum(diff**2, axis=-1)


def k_seard(log_var, log_ls, A, B):
    ls = jnp.exp(log_ls)
    return jnp.exp(log_var) * jnp.exp(-0.5 * _scaled_sqdist(A, B, ls))


def k_matern32(log_var, log_ls, A, B):
    d2 = _scaled_sqdist(A, B, jnp.exp(log_ls[0]))
    # sqrt has an infinite derivative at 0; the kernel itself is smooth there
    pos = d2 > 0
    r = jnp.where(pos, jnp.sqrt(jnp.where(pos, d2, 1.0)), 0.0)
    s = SQRT3 * r
    return jnp.exp(log_var) * (1.0 + s) * jnp.exp(-s)


def kern(family, log_var, log_ls, A, B):
    if KernelFamily(family) is KernelFamily.SEARD:
        return k_seard(log_var, log_ls, A, B)
    return k_matern32(log_var, log_ls, A, B)


def kmm_jittered(family, log_var, log_ls, Z, jitter=JITTER):
    M = Z.shape[0]
    return kern(family, log_var, log_ls, Z, Z) + jitter * jnp.exp(log_var) * jnp.eye(M)


def psi_seard(log_var, log_ls, mu, S, Z, chunk=PSI2_CHUNK):
    """Closed-form SE-ARD expectations under diagonal Gaussian q(X).

    Returns ``(psi0, psi1, psi2)``; psi2 is summed over rows block by block
    so the peak intermediate is ``chunk * M * M * Q`` rather than N-sized.
    """
    var = jnp.exp(log_var)
    ls = jnp.exp(log_ls)
    l2 = ls * ls
    N = mu.shape[0]
    psi0 = N * var

    # same operation order as k_seard so that S = 0 reproduces the Gram matrix bit for bit
    scale = jnp.sqrt(l2 + S)[:, None, :]  # N x 1 x Q
    d2 = jnp.sum((mu[:, None, :] / scale - Z[None, :, :] / scale) ** 2, axis=-1)
    log_psi1 = -0.5 * d2 - 0.5 * jnp.sum(jnp.log1p(S / l2), axis=-1)[:, None]
    psi1 = var * jnp.exp(log_psi1)

    zdist = -0.25 * jnp.sum((Z[:, None, :] - Z[None, :, :]) ** 2 / l2, axis=-1)
    zbar = 0.5 * (Z[:, None, :] + Z[None, :, :])  # M x M x Q

    # pad to whole blocks; padded rows get zero weight
    chunk = max(1, min(chunk, N))
    n_blocks = max(1, -(-N // chunk))
    pad = n_blocks * chunk - N
    Qd = mu.shape[1]
    mu_b = jnp.concatenate([mu, jnp.zeros((pad, Qd))]).reshape(n_blocks, chunk, Qd)
    S_b = jnp.concatenate([S, jnp.zeros((pad, Qd))]).reshape(n_blocks, chunk, Qd)
    w_b = jnp.concatenate([jnp.ones(N), jnp.zeros(pad)]).reshape(n_blocks, chunk)

    def block(acc, blk):
        mu_c, S_c, w_c = blk
        denom2 = l2 + 2.0 * S_c  # c x Q
        quad = jnp.sum((mu_c[:, None, None, :] - zbar[None]) ** 2 / denom2[:, None, None, :], axis=-1)
        logdet = -0.5 * jnp.sum(jnp.log1p(2.0 * S_c / l2), axis=-1)
        return acc + jnp.einsum("c,cij->ij", w_c, jnp.exp(logdet[:, None, None] - quad)), None

    if n_blocks == 1:
        psi2, _ = block(jnp.zeros((Z.shape[0], Z.shape[0])), (mu_b[0], S_b[0], w_b[0]))
    else:
        psi2, _ = jax.lax.scan(block, jnp.zeros((Z.shape[0], Z.shape[0])), (mu_b, S_b, w_b))
    psi2 = var**2 * jnp.exp(zdist) * psi2
    return psi0, psi1, psi2


# ---------------------------------------------------------------------------
# numpy-facing API
# ---------------------------------------------------------------------------


def _check_inputs(kernel: KernelSpec, *arrays):
    out = []
    for a in arrays:
        a = np.asarray(a, dtype=float)
        if a.ndim == 1:
            a = a[:, None]
        if a.ndim != 2:
            raise ValueError("inputs must be 2-D arrays of shape (n, d)")
        if not np.all(np.isfinite(a)):
            raise ValueError("inputs contain non-finite coordinates")
        out.append(a)
    dims = {a.shape[1] for a in out}
    if len(dims) != 1:
        raise ValueError(f"input dimension mismatch: {sorted(dims)}")
    d = dims.pop()
    if kernel.family is KernelFamily.SEARD and kernel.lengthscales.size != d:
        raise ValueError(
            f"SE-ARD kernel has {kernel.lengthscales.size} lengthscales but inputs have d={d}"
        )
    return out


def gram(kernel: KernelSpec, A, B) -> np.ndarray:
    """Covariance matrix with entries ``k(a_i, b_j)``.

    Plain numpy twin of :func:`kern`, used where no derivative is needed
    (avoids a jax compilation for every new input shape).
    """
    A, B = _check_inputs(kernel, A, B)
    ls = kernel.lengthscales
    d2 = cdist(A / ls, B / ls, "sqeuclidean")
    if kernel.family is KernelFamily.SEARD:
        return kernel.variance * np.exp(-0.5 * d2)
    s = SQRT3 * np.sqrt(d2)
    return kernel.variance * (1.0 + s) * np.exp(-s)


def gram_grad(kernel: KernelSpec, A, B, wrt) -> np.ndarray:
    """Analytic derivative of ``gram(kernel, A, B)``.

    ``wrt`` is one of

    * ``"log_variance"``
    * ``("log_lengthscale", q)`` (``"log_lengthscale"`` alone means q=0)
    * ``("A", i, j)`` / ``("B", i, j)``: coordinate j of row i of A or B,
      holding the other argument fixed.
    """
    A, B = _check_inputs(kernel, A, B)
    K = gram(kernel, A, B)
    var = kernel.variance
    if isinstance(wrt, str):
        wrt = (wrt,) if wrt != "log_lengthscale" else ("log_lengthscale", 0)
    name = wrt[0]

    if kernel.family is KernelFamily.SEARD:
        ls = kernel.lengthscales
        if name == "log_variance":
            return K
        if name == "log_lengthscale":
            q = _check_index(wrt[1], ls.size, "lengthscale")
            return K * (A[:, None, q] - B[None, :, q]) ** 2 / ls[q] ** 2
        if name in ("A", "B"):
            i, j = _input_index(wrt, A, B)
            out = np.zeros_like(K)
            if name == "A":
                out[i, :] = -K[i, :] * (A[i, j] - B[:, j]) / ls[j] ** 2
            else:
                out[:, i] = K[:, i] * (A[:, j] - B[i, j]) / ls[j] ** 2
            return out
    else:
        l = kernel.lengthscales[0]
        diff = A[:, None, :] - B[None, :, :]
        r = np.sqrt(np.sum(diff**2, axis=-1))
        s = SQRT3 * r / l
        if name == "log_variance":
            return K
        if name == "log_lengthscale":
            _check_index(wrt[1], 1, "lengthscale")
            return var * s**2 * np.exp(-s)
        if name in ("A", "B"):
            i, j = _input_index(wrt, A, B)
            out = np.zeros_like(K)
            coef = -var * 3.0 / l**2 * np.exp(-s)
            if name == "A":
                out[i, :] = coef[i, :] * (A[i, j] - B[:, j])
            else:
                out[:, i] = -coef[:, i] * (A[:, j] - B[i, j])
            return out
    raise ValueError(f"unknown gradient selector {wrt!r}")


def _check_index(idx, size, what):
    if not (isinstance(idx, (int, np.integer)) and 0 <= idx < size):
        raise ValueError(f"{what} index {idx!r} out of range for size {size}")
    return int(idx)


def _input_index(wrt, A, B):
    if len(wrt) != 3:
        raise ValueError(f"input selector must be (name, row, coord), got {wrt!r}")
    arr = A if wrt[0] == "A" else B
    return _check_index(wrt[1], arr.shape[0], "row"), _check_index(wrt[2], arr.shape[1], "coord")


@dataclass(frozen=True)
class QStats:
    psi0: float
    psi1: np.ndarray
    psi2: np.ndarray


def psi_stats(kernel: KernelSpec, q_means, q_covs, Z) -> QStats:
    """Kernel expectations under q(x_n) = N(q_means[n], diag(q_covs[n]))."""
    if kernel.family is not KernelFamily.SEARD:
        raise NotImplementedError("psi-statistics are only available for the SE-ARD kernel")
    q_means, Z = _check_inputs(kernel, q_means, Z)
    q_covs = np.asarray(q_covs, dtype=float).reshape(q_means.shape)
    if np.any(q_covs < 0) or not np.all(np.isfinite(q_covs)):
        raise ValueError("variational variances must be finite and non-negative")
    psi0, psi1, psi2 = psi_seard(kernel.log_variance, kernel.log_lengthscales, q_means, q_covs, Z)
    psi2 = np.asarray(psi2)
    return QStats(float(psi0), np.asarray(psi1), 0.5 * (psi2 + psi2.T))

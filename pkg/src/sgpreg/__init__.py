"""Regularized sparse Gaussian processes and latent variable models."""

import jax

jax.config.update("jax_enable_x64", True)

from .kernels import KernelFamily, KernelSpec, QStats, gram, gram_grad, psi_stats  # noqa: E402
from .exact import GprModel, log_marginal_l0, log_marginal_l0_grad, predict_full  # noqa: E402
from .sparse import (  # noqa: E402
    DegenerateInducingError,
    SgpKind,
    SgpState,
    nystrom_error,
    objective_grad,
    objective_l1,
    predict_sgp,
    quantization_error,
)
from .regularizer import (  # noqa: E402
    GaussianSummary,
    ObjectiveBreakdown,
    fit_gaussian_summary,
    kl_convexity_probe,
    kl_gaussian,
    regularized_objective,
)

__version__ = "0.1.0"

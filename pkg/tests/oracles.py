"""Independent dense reference implementations used as test oracles.

Written directly from textbook formulas with numpy/scipy only; nothing here
imports the package under test.
"""

import numpy as np
from scipy.stats import multivariate_normal


def matern32(x, xp, var, ls):
    r = np.linalg.norm(np.atleast_1d(x) - np.atleast_1d(xp))
    s = np.sqrt(3.0) * r / ls
    return var * (1.0 + s) * np.exp(-s)


def seard(x, xp, var, ls):
    d = (np.atleast_1d(x) - np.atleast_1d(xp)) / np.asarray(ls)
    return var * np.exp(-0.5 * d @ d)


def dense_gram(kfun, A, B, *args):
    return np.array([[kfun(a, b, *args) for b in B] for a in A])


def mvn_logpdf(y, cov):
    return float(multivariate_normal(mean=np.zeros(len(y)), cov=cov).logpdf(y))


def nystrom(Knm, Kmm):
    return Knm @ np.linalg.solve(Kmm, Knm.T)


def dtc(y, Knn, Knm, Kmm, beta):
    Q = nystrom(Knm, Kmm)
    return mvn_logpdf(y, Q + np.eye(len(y)) / beta)


def fitc(y, Knn, Knm, Kmm, beta):
    Q = nystrom(Knm, Kmm)
    return mvn_logpdf(y, Q + np.diag(np.diag(Knn - Q)) + np.eye(len(y)) / beta)


def sgpr(y, Knn, Knm, Kmm, beta):
    Q = nystrom(Knm, Kmm)
    return dtc(y, Knn, Knm, Kmm, beta) - 0.5 * beta * np.trace(Knn - Q)


def gauss_kl(m0, S0, m1, S1):
    d = len(m0)
    S1inv = np.linalg.inv(S1)
    diff = m1 - m0
    return 0.5 * (np.trace(S1inv @ S0) + diff @ S1inv @ diff - d
                  + np.linalg.slogdet(S1)[1] - np.linalg.slogdet(S0)[1])


def svgp(y, Knn, Knm, Kmm, beta, m, S):
    """Uncollapsed bound: sum_i E_q[log N(y_i | f_i, 1/beta)] - KL(q(u) || p(u))."""
    A = np.linalg.solve(Kmm, Knm.T).T  # N x M
    mean = A @ m
    var = np.diag(Knn) - np.sum(A * Knm, axis=1) + np.sum((A @ S) * A, axis=1)
    ell = np.sum(-0.5 * np.log(2 * np.pi / beta) - 0.5 * beta * ((y - mean) ** 2 + var))
    return ell - gauss_kl(m, S, np.zeros(len(m)), Kmm)

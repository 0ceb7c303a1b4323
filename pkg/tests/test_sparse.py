import math

import numpy as np
import pytest

import oracles
from sgpreg.exact import GprModel, log_marginal_l0, predict_full
from sgpreg.kernels import JITTER, KernelSpec, gram
from sgpreg.optim import grad_check
from sgpreg.schedules import FlatProblem
from sgpreg.sparse import (
    DegenerateInducingError,
    SgpState,
    nystrom_error,
    objective_grad,
    objective_l1,
    optimal_qu,
    predict_sgp,
    quantization_error,
    sgp_objective_jax,
    state_params,
)

KINDS = ["dtc", "fitc", "sgpr", "svgp"]


def _instance(seed, N=20, M=5, d=1, family="matern32", kind="sgpr"):
    rng = np.random.default_rng(seed)
    X = rng.uniform(0, 1, (N, d))
    y = np.sin(4 * X[:, 0]) + 0.1 * rng.standard_normal(N)
    ls = [rng.uniform(0.2, 0.6)] if family == "matern32" else list(rng.uniform(0.2, 0.6, d))
    k = KernelSpec(family, rng.uniform(0.5, 1.5), ls)
    Z = rng.uniform(0, 1, (M, d))
    extra = {}
    if kind == "svgp":
        extra = {"vu_mean": rng.normal(size=M), "vu_chol": np.tril(0.3 * rng.normal(size=(M, M)), -1)
                 + np.diag(rng.uniform(0.2, 0.8, M))}
    return SgpState(kind, k, rng.uniform(5, 50), Z, **extra), X, y


def _dense_parts(state, X, jitter=0.0):
    Knn = gram(state.kernel, X, X)
    Knm = gram(state.kernel, X, state.Z)
    Kmm = gram(state.kernel, state.Z, state.Z) + jitter * state.kernel.variance * np.eye(state.M)
    return Knn, Knm, Kmm


@pytest.mark.parametrize("kind", KINDS)
def test_objective_matches_dense_oracle(kind):
    for seed in range(3):
        s, X, y = _instance(seed, kind=kind)
        Knn, Knm, Kmm = _dense_parts(s, X)
        if kind == "svgp":
            ref = oracles.svgp(y, Knn, Knm, Kmm, s.beta, s.vu_mean, s.vu_cov)
        else:
            ref = getattr(oracles, kind)(y, Knn, Knm, Kmm, s.beta)
        assert objective_l1(s, X, y) == pytest.approx(ref, rel=1e-10)


@pytest.mark.parametrize("kind", KINDS)
def test_checked_and_training_evaluations_agree(kind):
    s, X, y = _instance(7, M=6, kind=kind)
    checked = objective_l1(s, X, y)
    training = objective_l1(s, X, y, check=False)
    direct = float(sgp_objective_jax(state_params(s), X, y, kind, "matern32", 0.0))
    assert checked == pytest.approx(direct, rel=1e-12)
    assert training == pytest.approx(float(sgp_objective_jax(state_params(s), X, y, kind, "matern32", JITTER)),
                                     rel=1e-12)


@pytest.mark.parametrize("kind", ["dtc", "fitc", "sgpr"])
def test_collapse_to_exact_gp(kind):
    for seed in range(5):
        rng = np.random.default_rng(seed)
        N = int(rng.integers(5, 50))
        X = rng.uniform(0, 3, (N, 1))
        k = KernelSpec("matern32", rng.uniform(0.5, 2), [rng.uniform(0.2, 1)])
        beta = rng.uniform(1, 50)
        y = rng.normal(size=N)
        l0 = log_marginal_l0(GprModel(k, beta, X, y))
        l1 = objective_l1(SgpState(kind, k, beta, X), X, y)
        assert abs(l1 - l0) <= 1e-6 * abs(l0)


def test_sgpr_is_dtc_minus_trace_term():
    s, X, y = _instance(7)
    Knn, Knm, Kmm = _dense_parts(s, X)
    tr = np.trace(Knn - oracles.nystrom(Knm, Kmm))
    dtc = objective_l1(SgpState("dtc", s.kernel, s.beta, s.Z), X, y)
    sgpr = objective_l1(s, X, y)
    assert sgpr == pytest.approx(dtc - 0.5 * s.beta * tr, rel=1e-10)
    assert sgpr <= dtc


def test_svgp_lower_bounds_exact():
    for seed in range(10):
        s, X, y = _instance(seed, kind="svgp")
        l0 = log_marginal_l0(GprModel(s.kernel, s.beta, X, y))
        assert objective_l1(s, X, y) <= l0 + 1e-8


def test_svgp_optimal_qu_equals_sgpr_and_is_stationary():
    s, X, y = _instance(3)
    m, Ls = optimal_qu(s, X, y)
    sv = SgpState("svgp", s.kernel, s.beta, s.Z, vu_mean=m, vu_chol=Ls)
    assert objective_l1(sv, X, y) == pytest.approx(objective_l1(s, X, y), rel=1e-9)
    assert np.linalg.norm(objective_grad(sv, X, y)["q_mu"]) < 1e-6


@pytest.mark.parametrize("kind", KINDS)
def test_gradients_match_finite_differences(kind):
    worst = 0.0
    for seed in range(10):
        s, X, y = _instance(seed, N=12, M=4, d=2, family="seard", kind=kind)
        params = state_params(s)
        prob = FlatProblem(sgp_objective_jax, params, list(params), (X, y), (kind, "seard"))
        worst = max(worst, grad_check(prob, prob.x0))
    assert worst < 1e-4


def test_objective_grad_dict_keys_and_values():
    s, X, y = _instance(4, kind="svgp")
    g = objective_grad(s, X, y)
    assert set(g) == {"log_variance", "log_lengthscales", "log_beta", "Z", "q_mu", "q_chol"}
    h = 1e-6
    up = SgpState("svgp", s.kernel, s.beta * np.exp(h), s.Z, s.vu_mean, s.vu_chol)
    dn = SgpState("svgp", s.kernel, s.beta * np.exp(-h), s.Z, s.vu_mean, s.vu_chol)
    fd = (objective_l1(up, X, y) - objective_l1(dn, X, y)) / (2 * h)
    assert float(g["log_beta"]) == pytest.approx(fd, rel=1e-5)


def test_sgpr_trace_term_stationary_at_full_inducing_set():
    rng = np.random.default_rng(5)
    X = rng.uniform(0, 2, (8, 1))
    k = KernelSpec("matern32", 1.0, [0.5])
    y = rng.normal(size=8)
    h = 1e-5

    def trace_term(Z):
        return objective_l1(SgpState("sgpr", k, 10.0, Z), X, y) - objective_l1(SgpState("dtc", k, 10.0, Z), X, y)

    for i in range(8):
        e = np.zeros_like(X)
        e[i, 0] = h
        fd = (trace_term(X + e) - trace_term(X - e)) / (2 * h)
        assert abs(fd) < 1e-4


def test_duplicate_inducing_inputs_rejected():
    s, X, y = _instance(0)
    Z = np.vstack([s.Z, s.Z[:1]])
    with pytest.raises(DegenerateInducingError):
        objective_l1(SgpState("sgpr", s.kernel, s.beta, Z), X, y)


def test_svgp_zero_mean_predicts_zero():
    s, X, y = _instance(1, kind="svgp")
    s0 = SgpState("svgp", s.kernel, s.beta, s.Z, np.zeros(s.M), s.vu_chol)
    mean, var, c = predict_sgp(s0, X, y, np.linspace(0, 1, 9)[:, None])
    assert np.all(mean == 0.0)
    assert np.all(c == 0.0)


def test_dtc_full_inducing_set_matches_exact_prediction():
    rng = np.random.default_rng(2)
    X = rng.uniform(0, 1, (25, 1))
    y = rng.normal(size=25)
    k = KernelSpec("matern32", 0.9, [0.3])
    Xs = np.linspace(0, 1, 11)[:, None]
    ref, _ = predict_full(GprModel(k, 20.0, X, y), Xs)
    mean, _, _ = predict_sgp(SgpState("dtc", k, 20.0, X), X, y, Xs)
    np.testing.assert_allclose(mean, ref, rtol=1e-6, atol=1e-9)


def test_sgpr_weights_match_dtc_woodbury_form():
    s, X, y = _instance(6)
    Knn, Knm, Kmm = _dense_parts(s, X)
    Q = oracles.nystrom(Knm, Kmm)
    c_dtc = np.linalg.solve(Kmm, Knm.T @ np.linalg.solve(Q + np.eye(len(y)) / s.beta, y))
    _, _, c = predict_sgp(s, X, y, X[:2])
    np.testing.assert_allclose(c, c_dtc, rtol=1e-8)
    c_direct = s.beta * np.linalg.solve(Kmm + s.beta * Knm.T @ Knm, Knm.T @ y)
    np.testing.assert_allclose(c, c_direct, rtol=1e-8)


def test_fitc_weights_match_dense_form():
    s, X, y = _instance(8, kind="fitc")
    Knn, Knm, Kmm = _dense_parts(s, X)
    Lam = np.diag(Knn - oracles.nystrom(Knm, Kmm)) + 1 / s.beta
    c_ref = np.linalg.solve(Kmm + Knm.T @ (Knm / Lam[:, None]), Knm.T @ (y / Lam))
    _, _, c = predict_sgp(s, X, y, X[:2])
    np.testing.assert_allclose(c, c_ref, rtol=1e-8)


def test_prediction_mean_is_linear_in_y():
    for kind in ["dtc", "fitc", "sgpr"]:
        s, X, y = _instance(9, kind=kind)
        y2 = np.random.default_rng(0).normal(size=y.size)
        Xs = np.linspace(0, 1, 7)[:, None]
        m1 = predict_sgp(s, X, y, Xs)[0]
        m2 = predict_sgp(s, X, y2, Xs)[0]
        m12 = predict_sgp(s, X, 2 * y - 3 * y2, Xs)[0]
        np.testing.assert_allclose(m12, 2 * m1 - 3 * m2, rtol=1e-8, atol=1e-10)


def test_nystrom_zero_at_full_set():
    rng = np.random.default_rng(0)
    X = rng.uniform(0, 1, (30, 1))
    k = KernelSpec("matern32", 1.0, [0.3])
    assert nystrom_error(k, X, X) <= 1e-6 * np.linalg.norm(gram(k, X, X))


def test_nystrom_tiny_case_matches_dense():
    k = KernelSpec("seard", 1.4, [0.8])
    X = np.array([[0.0], [0.9]])
    Z = np.array([[0.3]])
    Knn = gram(k, X, X)
    Knm = gram(k, X, Z)
    Kmm = gram(k, Z, Z) + JITTER * 1.4
    ref = np.linalg.norm(Knn - Knm @ Knm.T / Kmm[0, 0], "fro")
    assert nystrom_error(k, X, Z) == pytest.approx(ref, rel=1e-10)


def test_nystrom_blocked_equals_dense():
    rng = np.random.default_rng(1)
    X, Z = rng.uniform(0, 1, (53, 1)), rng.uniform(0, 1, (6, 1))
    k = KernelSpec("matern32", 1.0, [0.2])
    assert nystrom_error(k, X, Z, block=7) == pytest.approx(nystrom_error(k, X, Z, block=1000), rel=1e-12)


def test_nystrom_monotone_when_adding_training_inputs():
    rng = np.random.default_rng(4)
    for _ in range(5):
        X = rng.uniform(0, 1, (20, 1))
        k = KernelSpec("matern32", 1.0, [0.25])
        Z = X[:2].copy()
        prev = nystrom_error(k, X, Z)
        for i in range(2, 8):
            Z = np.vstack([Z, X[i : i + 1]])
            cur = nystrom_error(k, X, Z)
            assert cur <= prev + 1e-9
            prev = cur


def test_quantization_examples():
    X = np.array([[0.0], [1.0]])
    assert quantization_error(X, np.array([[0.5]])) == 0.5
    assert quantization_error(X, np.vstack([X, [[3.0]]])) == 0.0
    assert quantization_error(np.array([0.0, 1.0]), np.array([0.5])) == 0.5


def test_quantization_brute_force():
    rng = np.random.default_rng(2)
    X, Z = rng.normal(size=(100, 2)), rng.normal(size=(5, 2))
    mins = []
    for x in X:
        best = math.inf
        for z in Z:
            best = min(best, (x[0] - z[0]) ** 2 + (x[1] - z[1]) ** 2)
        mins.append(best)
    assert quantization_error(X, Z) == math.fsum(mins)

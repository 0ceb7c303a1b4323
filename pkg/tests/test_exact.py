import numpy as np
import pytest

from oracles import dense_gram, mvn_logpdf, seard
from sgpreg.exact import GprModel, log_marginal_l0, log_marginal_l0_grad, predict_full
from sgpreg.kernels import KernelSpec, gram


def _model(y, X=None, var=1.0, ls=(1.0,), beta=1.0, family="seard"):
    X = np.zeros((len(y), 1)) if X is None else X
    return GprModel(KernelSpec(family, var, list(ls)), beta, X, np.asarray(y, float))


def test_single_point_at_mean():
    assert log_marginal_l0(_model([0.0])) == pytest.approx(-0.5 * np.log(4 * np.pi), rel=1e-14)


def test_single_point_off_mean():
    val = log_marginal_l0(_model([np.sqrt(2.0)]))
    assert val == pytest.approx(-0.5 * np.log(4 * np.pi) - 0.5, rel=1e-14)
    assert val == pytest.approx(-1.7655, abs=1e-4)


def test_random_draw_matches_dense_logpdf():
    rng = np.random.default_rng(0)
    X = rng.uniform(-2, 2, (50, 2))
    K = dense_gram(seard, X, X, 1.3, [0.7, 1.1])
    C = K + np.eye(50) / 20.0
    y = np.linalg.cholesky(C) @ rng.standard_normal(50)
    m = GprModel(KernelSpec("seard", 1.3, [0.7, 1.1]), 20.0, X, y)
    assert log_marginal_l0(m) == pytest.approx(mvn_logpdf(y, C), rel=1e-10)


def test_permutation_invariance():
    rng = np.random.default_rng(1)
    X, y = rng.normal(size=(15, 1)), rng.normal(size=15)
    p = rng.permutation(15)
    k = KernelSpec("matern32", 0.8, [0.5])
    a = log_marginal_l0(GprModel(k, 4.0, X, y))
    b = log_marginal_l0(GprModel(k, 4.0, X[p], y[p]))
    assert a == pytest.approx(b, rel=1e-12)


def test_gradient_matches_fd():
    rng = np.random.default_rng(2)
    X, y = rng.normal(size=(12, 2)), rng.normal(size=12)
    k = KernelSpec("seard", 1.1, [0.6, 1.4])
    g = log_marginal_l0_grad(GprModel(k, 3.0, X, y))
    h = 1e-6

    def at(lv, ll, lb):
        return log_marginal_l0(GprModel(k.with_log_params(lv, ll), np.exp(lb), X, y))

    lv, ll, lb = k.log_variance, k.log_lengthscales, np.log(3.0)
    fd_v = (at(lv + h, ll, lb) - at(lv - h, ll, lb)) / (2 * h)
    fd_b = (at(lv, ll, lb + h) - at(lv, ll, lb - h)) / (2 * h)
    e0 = np.array([h, 0.0])
    fd_l0 = (at(lv, ll + e0, lb) - at(lv, ll - e0, lb)) / (2 * h)
    assert g["log_variance"] == pytest.approx(fd_v, rel=1e-4)
    assert g["log_beta"] == pytest.approx(fd_b, rel=1e-4)
    assert g["log_lengthscales"][0] == pytest.approx(fd_l0, rel=1e-4)


def test_noiseless_interpolation():
    X = np.array([[0.0], [0.5], [1.3]])
    y = np.array([0.2, -0.4, 0.9])
    m = GprModel(KernelSpec("matern32", 1.0, [0.5]), 1e10, X, y)
    mean, _ = predict_full(m, X[1:2])
    assert mean[0] == pytest.approx(-0.4, abs=1e-4)


def test_prior_reversion_far_away():
    X = np.array([[0.0], [0.3]])
    m = GprModel(KernelSpec("seard", 2.0, [0.1]), 10.0, X, np.array([1.0, -1.0]))
    mean, var = predict_full(m, np.array([[100.0]]))
    assert abs(mean[0]) < 1e-12
    assert var[0] == pytest.approx(2.0, rel=1e-12)


def test_predictive_variance_bounded_by_prior():
    rng = np.random.default_rng(3)
    X = rng.uniform(0, 1, (30, 1))
    k = KernelSpec("matern32", 0.7, [0.2])
    m = GprModel(k, 50.0, X, rng.normal(size=30))
    _, var = predict_full(m, np.linspace(-0.5, 1.5, 80)[:, None])
    assert np.all(var >= 0)
    assert np.all(var <= 0.7 + 1e-8)
    _, var_noisy = predict_full(m, np.array([[0.5]]), include_noise=True)
    _, var_latent = predict_full(m, np.array([[0.5]]))
    assert var_noisy[0] == pytest.approx(var_latent[0] + 1 / 50.0)


def test_model_validation():
    k = KernelSpec("seard", 1.0, [1.0])
    with pytest.raises(ValueError):
        GprModel(k, 0.0, np.zeros((1, 1)), np.zeros(1))
    with pytest.raises(ValueError):
        GprModel(k, 1.0, np.zeros((2, 1)), np.zeros(3))
    with pytest.raises(ValueError):
        GprModel(k, 1.0, np.zeros((1, 1)), np.array([np.inf]))

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sgpreg.data import (
    NoiseInjectionSpec,
    SyntheticSpec,
    TableError,
    generate_latent_table,
    generate_synthetic,
    inject_noise,
    kmeans_init,
    load_table,
    pca_init,
    rmse,
    standardize,
    true_function,
    write_table,
)
from sgpreg.sparse import quantization_error


def test_true_function_values():
    assert true_function(0.0) == pytest.approx(0.2, abs=1e-15)
    assert true_function(math.pi / 4) == pytest.approx(1.0, abs=1e-14)


def test_noise_free_targets():
    d = generate_synthetic(SyntheticSpec(noise_sd=0.0, seed=1))
    np.testing.assert_array_equal(d["y"], true_function(d["X"][:, 0]))
    np.testing.assert_array_equal(d["y_val"], true_function(d["X_val"][:, 0]))


def test_synthetic_shapes_and_splits():
    d = generate_synthetic(SyntheticSpec(seed=2))
    assert d["X"].shape == (100, 1) and d["y"].shape == (100,)
    np.testing.assert_array_equal(d["X_test"][:, 0], np.linspace(0, 1, 100))
    assert np.all((d["X"] >= 0) & (d["X"] <= 1))
    assert not np.intersect1d(d["X"], d["X_val"]).size
    again = generate_synthetic(SyntheticSpec(seed=2))
    for k in d:
        np.testing.assert_array_equal(d[k], again[k])
    with pytest.raises(ValueError):
        SyntheticSpec(n_train=0)
    with pytest.raises(ValueError):
        SyntheticSpec(noise_sd=-1)


def test_table_round_trip(tmp_path):
    vals = np.array([[1.5, -2.0], [0.0, 3.25], [1e-7, 42.0]])
    p = tmp_path / "t.csv"
    write_table(p, vals, ["a", "b"])
    t = load_table(p)
    np.testing.assert_array_equal(t.values, vals)
    assert t.columns == ["a", "b"]
    p2 = tmp_path / "nohead.csv"
    p2.write_text("1,2\n3,4\n5,6\n")
    np.testing.assert_array_equal(load_table(p2).values, [[1, 2], [3, 4], [5, 6]])


def test_table_errors(tmp_path):
    empty = tmp_path / "e.csv"
    empty.write_text("")
    with pytest.raises(TableError, match="empty"):
        load_table(empty)
    header_only = tmp_path / "h.csv"
    header_only.write_text("a,b\n")
    with pytest.raises(TableError, match="empty"):
        load_table(header_only)
    ragged = tmp_path / "r.csv"
    ragged.write_text("a,b\n1,2\n3\n")
    with pytest.raises(TableError, match=":3:"):
        load_table(ragged)
    text = tmp_path / "s.csv"
    text.write_text("a,label\n1,2\n3,frog\n")
    with pytest.raises(TableError, match="'label'"):
        load_table(text)
    assert load_table(text, drop_columns=["label"]).values.tolist() == [[1.0], [3.0]]
    nan = tmp_path / "n.csv"
    nan.write_text("a\n1\nnan\n")
    with pytest.raises(TableError, match=":3:"):
        load_table(nan)


def test_table_env_dir(tmp_path, monkeypatch):
    (tmp_path / "d.csv").write_text("x\n1\n2\n")
    monkeypatch.setenv("SGPREG_DATA_DIR", str(tmp_path))
    monkeypatch.chdir("/")
    assert load_table("d.csv").values.ravel().tolist() == [1.0, 2.0]


def test_standardize_examples():
    z, st_ = standardize(np.array([1.0, 2.0, 3.0]))
    np.testing.assert_allclose(z[:, 0], [-1.224744871391589, 0.0, 1.224744871391589], rtol=1e-14)
    assert st_.sd[0] == pytest.approx(math.sqrt(2 / 3))
    z2, _ = standardize(z)
    np.testing.assert_allclose(z2, z, atol=1e-12)
    with pytest.raises(ValueError, match="temp"):
        standardize(np.array([[1.0, 5.0], [2.0, 5.0]]), columns=["a", "temp"])


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 40), st.integers(1, 5), st.integers(0, 10**6))
def test_standardize_round_trip(n, d, seed):
    Y = np.random.default_rng(seed).normal(3, 5, size=(n, d))
    Z, s = standardize(Y)
    np.testing.assert_allclose(Z.mean(0), 0, atol=1e-12)
    np.testing.assert_allclose(Z.std(0), 1, rtol=1e-12)
    np.testing.assert_allclose(s.inverse(Z), Y, rtol=1e-12, atol=1e-12)


def test_inject_noise_cases():
    Y = np.random.default_rng(0).normal(size=(20, 4))
    same, mask = inject_noise(Y, NoiseInjectionSpec(5, noise_sd=0.0, seed=1))
    np.testing.assert_array_equal(same, Y)
    assert mask.sum() == 5 and np.all(mask.sum(1) <= 1)
    col = np.zeros((7, 1))
    noisy, mask = inject_noise(col, NoiseInjectionSpec(7, seed=2))
    assert mask.all() and np.all(noisy != 0)
    a = inject_noise(Y, NoiseInjectionSpec(8, seed=3))
    b = inject_noise(Y, NoiseInjectionSpec(8, seed=3))
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1], b[1])
    changed = a[0] != Y
    np.testing.assert_array_equal(changed, a[1])
    assert changed.any(axis=1).sum() == 8
    with pytest.raises(ValueError):
        inject_noise(Y, NoiseInjectionSpec(21))


def test_latent_table_shape_and_determinism():
    a = generate_latent_table(50, seed=4)
    assert a.shape == (50, 8)
    np.testing.assert_array_equal(a, generate_latent_table(50, seed=4))
    assert generate_latent_table(10, n_features=12).shape == (10, 12)


def test_rmse_cases():
    assert rmse([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert rmse([0.0, 0.0], [3.0, 4.0]) == pytest.approx(3.5355339, abs=1e-7)
    A, B = np.arange(6.0).reshape(2, 3), np.ones((2, 3))
    assert rmse(A, B) == rmse(A.ravel(), B.ravel())
    with pytest.raises(ValueError):
        rmse(A, B.T)


def test_pca_reproduces_subspace():
    rng = np.random.default_rng(0)
    Y = rng.normal(size=(30, 3))
    Y -= Y.mean(0)
    S = pca_init(Y, 3)
    P = S @ np.linalg.pinv(S)
    assert np.abs(P @ Y - Y).max() < 1e-8
    R, *_ = np.linalg.lstsq(S, Y, rcond=None)
    np.testing.assert_allclose(R @ R.T, np.eye(3), atol=1e-8)


def test_pca_rank_checks():
    Y = np.outer(np.arange(10.0), [1.0, 2.0, 3.0])
    with pytest.raises(ValueError):
        pca_init(Y, 2)
    with pytest.raises(ValueError):
        pca_init(Y, 4)
    assert pca_init(Y, 1).shape == (10, 1)


def test_kmeans_full_set():
    P = np.random.default_rng(1).normal(size=(12, 2))
    C = kmeans_init(P, 12, seed=0)
    assert quantization_error(P, C) == 0.0


def test_kmeans_two_clusters():
    rng = np.random.default_rng(2)
    A = rng.normal(-10, 0.5, size=(40, 2))
    B = rng.normal(10, 0.5, size=(25, 2))
    C = kmeans_init(np.vstack([A, B]), 2, seed=3)
    C = C[np.argsort(C[:, 0])]
    np.testing.assert_allclose(C[0], A.mean(0), atol=1e-6)
    np.testing.assert_allclose(C[1], B.mean(0), atol=1e-6)
    with pytest.raises(ValueError):
        kmeans_init(A, 41)

import numpy as np
import pytest

from sgpreg.data import SyntheticSpec, generate_synthetic
from sgpreg.optim import NonFiniteObjective, OptimizeConfig, grad_check, maximize
from sgpreg.schedules import (
    DEFAULT_GRID,
    LVM_GRID,
    AllRunsFailed,
    Schedule,
    ScheduleConfig,
    inducing_grid,
    run_schedule,
    select_lambda,
)


def neg_quadratic(center):
    center = np.asarray(center, float)

    def f(x):
        d = x - center
        return -float(d @ d), -2 * d

    return f


def neg_rosenbrock(x):
    a, b = x
    f = (1 - a) ** 2 + 100 * (b - a**2) ** 2
    g = np.array([-2 * (1 - a) - 400 * a * (b - a**2), 200 * (b - a**2)])
    return -f, -g


def test_active_bound():
    x, trace = maximize(neg_quadratic([2.0]), [0.0], OptimizeConfig(bounds=[(None, 1.0)]))
    assert x[0] == 1.0
    assert trace.converged


def test_unconstrained_10d():
    x0 = np.random.default_rng(0).normal(size=10)
    x, _ = maximize(neg_quadratic(np.zeros(10)), x0)
    assert np.linalg.norm(x) < 1e-6


def test_rosenbrock():
    x, trace = maximize(neg_rosenbrock, [-1.2, 1.0], OptimizeConfig(max_iter=1000, grad_tol=1e-10))
    np.testing.assert_allclose(x, [1.0, 1.0], atol=1e-4)
    assert trace.n_iter <= 1000
    assert np.all(np.diff(trace.values) >= 0)


def test_nonfinite_start_rejected():
    with pytest.raises(NonFiniteObjective):
        maximize(lambda x: (np.nan, np.zeros(1)), [0.0])
    with pytest.raises(NonFiniteObjective):
        maximize(lambda x: (0.0, np.array([np.inf])), [0.0])


def test_config_validation():
    with pytest.raises(ValueError):
        OptimizeConfig(max_iter=0)
    with pytest.raises(ValueError):
        OptimizeConfig(bounds=[(1.0, 0.0)])


def test_max_iter_respected():
    _, trace = maximize(neg_rosenbrock, [-1.2, 1.0], OptimizeConfig(max_iter=3))
    assert trace.n_iter <= 3
    assert not trace.converged


def test_grad_check_quadratic():
    assert grad_check(neg_quadratic([1.0, -2.0, 0.5]), np.array([0.3, 0.1, -0.7])) < 1e-10


def test_grad_check_detects_wrong_gradient():
    def bad(x):
        return float(x @ x), 3 * x

    assert grad_check(bad, np.array([1.0, 2.0])) == pytest.approx(1 / 3, rel=1e-6)


# -- schedules ---------------------------------------------------------------


@pytest.fixture(scope="module")
def small_data():
    return generate_synthetic(SyntheticSpec(n_train=40, n_val=40, n_test=50, seed=3))


def test_schedule_config_validation():
    with pytest.raises(ValueError):
        ScheduleConfig("s3")
    with pytest.raises(ValueError):
        ScheduleConfig("s2", lam=1.0)
    with pytest.raises(ValueError):
        ScheduleConfig("s4", lam=-1.0)
    with pytest.raises(ValueError):
        ScheduleConfig("s3", lambda_grid=[])
    assert ScheduleConfig("s4", lambda_grid=[1, 2]).with_lambda(2).lam == 2.0
    assert Schedule.S4.direction.value == "zx" and Schedule.S3.direction.value == "xz"
    assert not Schedule.S1.learns_z and Schedule.S2.learns_z


def test_grids():
    assert len(DEFAULT_GRID) == 20
    assert DEFAULT_GRID[0] == pytest.approx(1e-2) and DEFAULT_GRID[-1] == pytest.approx(1e2)
    assert LVM_GRID == (1.0, 10.0, 100.0, 1000.0)


def test_inducing_grid_is_even():
    Z = inducing_grid(np.random.default_rng(0).uniform(size=(30, 1)), 5, domain=(0.0, 1.0))
    np.testing.assert_array_equal(Z[:, 0], np.linspace(0, 1, 5))


@pytest.mark.parametrize("kind", ["dtc", "sgpr"])
def test_lambda_zero_reproduces_s2_exactly(small_data, kind):
    cfg = OptimizeConfig(max_iter=60)
    a = run_schedule(kind, small_data, ScheduleConfig("s2"), cfg, M=6)
    for sched in ("s3", "s4"):
        b = run_schedule(kind, small_data, ScheduleConfig(sched, 0.0), cfg, M=6)
        assert b.trace.values == a.trace.values
        np.testing.assert_array_equal(b.state.Z, a.state.Z)
        for key in ("rmse_train", "rmse_val", "rmse_test", "nystrom_error", "beta"):
            assert b.metrics[key] == a.metrics[key]


def test_s1_keeps_inducing_inputs_fixed(small_data):
    r = run_schedule("sgpr", small_data, ScheduleConfig("s1"), OptimizeConfig(max_iter=30), M=5)
    np.testing.assert_array_equal(r.state.Z[:, 0], np.linspace(small_data["X"].min(), small_data["X"].max(), 5))
    assert np.all(np.diff(r.trace.values) >= 0)


def test_run_is_deterministic(small_data):
    cfg = OptimizeConfig(max_iter=40)
    a = run_schedule("fitc", small_data, ScheduleConfig("s3", 1.0), cfg, M=6)
    b = run_schedule("fitc", small_data, ScheduleConfig("s3", 1.0), cfg, M=6)
    assert a.trace.values == b.trace.values
    assert {k: v for k, v in a.metrics.items() if k != "wall_time"} == \
           {k: v for k, v in b.metrics.items() if k != "wall_time"}


def test_select_lambda_single_element(small_data):
    lam, best, per = select_lambda("sgpr", small_data, "s3", [0.5], OptimizeConfig(max_iter=20), M=5)
    assert lam == 0.5
    assert len(per) == 1 and per[0][1] is best


def test_select_lambda_picks_min_validation_rmse(small_data):
    lam, best, per = select_lambda("dtc", small_data, ScheduleConfig("s4", lambda_grid=[0.0, 1.0, 10.0]),
                                   [0.0, 1.0, 10.0], OptimizeConfig(max_iter=30), M=5)
    vals = [r.metrics["rmse_val"] for _, r in per]
    assert best.metrics["rmse_val"] == min(vals)
    assert lam == [l for l, _ in per][int(np.argmin(vals))]


def test_select_lambda_ties_prefer_smaller(small_data, monkeypatch):
    import sgpreg.schedules as sch

    class Fake:
        def __init__(self, lam):
            self.metrics = {"rmse_val": 1.0 if lam > 0.1 else 2.0}

    monkeypatch.setattr(sch, "RunResult", Fake)
    monkeypatch.setattr(sch, "run_schedule", lambda kind, data, sc, cfg, **kw: Fake(sc.lam))
    lam, _, _ = sch.select_lambda("sgpr", small_data, "s3", [10.0, 0.01, 1.0])
    assert lam == 1.0


def test_select_lambda_errors(small_data, monkeypatch):
    import sgpreg.schedules as sch

    with pytest.raises(ValueError):
        select_lambda("sgpr", small_data, "s3", [])
    with pytest.raises(ValueError):
        select_lambda("sgpr", small_data, "s2", [1.0])

    def boom(*a, **k):
        raise RuntimeError("fail")

    monkeypatch.setattr(sch, "run_schedule", boom)
    with pytest.raises(AllRunsFailed):
        sch.select_lambda("sgpr", small_data, "s3", [1.0, 2.0])

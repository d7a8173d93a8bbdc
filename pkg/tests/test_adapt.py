import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import fembem.adapt as adapt_mod
from fembem.adapt import (
    RUNLOG_COLUMNS,
    AdaptiveConfig,
    LevelRecord,
    RunLog,
    doerfler_mark,
    estimator_reduction_fit,
    run,
)
from fembem.coupling import SolverError
from fembem.estimate import EstimatorBreakdown
from fembem.problems import make_problem
from oracles import brute_force_doerfler


def est_from(values):
    v = np.asarray(values, dtype=float)
    return EstimatorBreakdown(v, np.array([]), np.array([]))


def chosen_values(est, marks):
    return np.concatenate([est.triangles[marks.triangles], est.interior[marks.interior_edges],
                           est.boundary[marks.boundary_edges]])


def test_doerfler_examples():
    marks, done = doerfler_mark(est_from([4, 3, 2, 1]), 0.5)
    assert not done and sorted(marks.triangles) == [0, 1]
    marks, _ = doerfler_mark(est_from([4, 3, 2, 1]), 1.0)
    assert sorted(marks.triangles) == [0, 1, 2, 3]
    marks, _ = doerfler_mark(est_from([0, 0, 5, 0]), 0.3)
    assert list(marks.triangles) == [2]
    marks, done = doerfler_mark(est_from([0, 0]), 0.5)
    assert done and marks.triangles.size == 0


def test_doerfler_rejects_bad_input():
    with pytest.raises(ValueError):
        doerfler_mark(est_from([1, 2]), 0.0)
    with pytest.raises(ValueError):
        doerfler_mark(est_from([1, -2]), 0.5)


def test_doerfler_mixes_entity_kinds():
    est = EstimatorBreakdown(np.array([1.0, 0.1]), np.array([5.0]), np.array([3.0, 0.2]))
    marks, _ = doerfler_mark(est, 0.8)
    assert list(marks.interior_edges) == [0] and list(marks.boundary_edges) == [0]
    assert marks.triangles.size == 0


values = arrays(np.float64, st.integers(1, 10), elements=st.floats(0, 1e3, allow_nan=False, allow_subnormal=False))


@settings(max_examples=300, deadline=None)
@given(t=values, e=values, b=values, theta=st.floats(0.01, 1.0))
def test_doerfler_feasible_and_minimal(t, e, b, theta):
    est = EstimatorBreakdown(t, e, b)
    marks, done = doerfler_mark(est, theta)
    if done:
        assert est.total_sq == 0
        return
    chosen = chosen_values(est, marks)
    allv = np.concatenate([t, e, b])
    assert math.fsum(chosen) >= theta * math.fsum(allv)
    # greedy-minimal: dropping the smallest chosen entry breaks the criterion
    assert math.fsum(np.sort(chosen)[1:]) < theta * math.fsum(allv)
    if len(allv) <= 12:
        assert len(chosen) == brute_force_doerfler(allv, theta)


def test_max_elements_below_initial_logs_single_level():
    log = run(make_problem("lshape-laplace"), AdaptiveConfig(max_elements=5))
    assert len(log.rows) == 1 and log.rows[0].n_triangles == 12


def test_theta_one_means_uniform():
    cfg = AdaptiveConfig(theta=1.0)
    assert cfg.strategy == "uniform"
    with pytest.raises(ValueError):
        AdaptiveConfig(theta=1.5)
    with pytest.raises(ValueError):
        AdaptiveConfig(strategy="random")


@pytest.mark.parametrize("strategy", ["adaptive", "uniform"])
def test_run_log_contents(strategy, tmp_path):
    log = run(make_problem("lshape-laplace"), AdaptiveConfig(method="sym", max_elements=800, strategy=strategy))
    N = log.column("n_triangles")
    assert np.all(np.diff(N) > 0) and N[-1] <= 800
    assert [r.level for r in log.rows] == list(range(len(log.rows)))
    assert len(log.increments) == len(log.rows) - 1
    assert np.all(np.diff(log.column("time_seconds")) >= 0) or strategy == "uniform"
    assert not log.failed
    assert all("incompatible_data" in r.flags for r in log.rows)
    path = tmp_path / "log.csv"
    log.write_csv(path)
    assert path.read_text().splitlines()[0] == ",".join(RUNLOG_COLUMNS)
    back = RunLog.read_csv(path)
    assert np.array_equal(back.column("est_total"), log.column("est_total"))
    assert np.array_equal(back.column("err_omega"), log.column("err_omega"))


def test_solver_failure_is_flagged(monkeypatch):
    calls = {"n": 0}
    real = adapt_mod._solve_system

    def flaky(system, cfg, stabilized, x0=None):
        calls["n"] += 1
        if calls["n"] == 3:
            raise SolverError("singular", "SingularSystem")
        return real(system, cfg, stabilized, x0)

    monkeypatch.setattr(adapt_mod, "_solve_system", flaky)
    log = run(make_problem("lshape-laplace"), AdaptiveConfig(max_elements=10**5))
    assert log.failed and len(log.rows) == 3
    assert "SingularSystem" in log.rows[-1].flags
    assert log.rows[-1].err_omega is None


def _log_from(zeta, inc):
    log = RunLog()
    for i, z in enumerate(zeta):
        log.rows.append(LevelRecord(i, 10 * (i + 1), 4, 1.0, None, z, z, 0.0, 1, 0.0))
    log.increments = list(inc)
    return log


def test_reduction_fit_examples():
    zeta = 0.5 ** np.arange(8)
    fit = estimator_reduction_fit(_log_from(zeta, np.zeros(7)))
    assert fit.kappa == pytest.approx(0.25, rel=1e-9)
    assert fit.feasible_below_one and fit.fraction_satisfied == 1.0
    const = estimator_reduction_fit(_log_from(np.ones(8), np.zeros(7)))
    assert const.kappa == pytest.approx(1.0) and not const.feasible_below_one
    with pytest.raises(ValueError):
        estimator_reduction_fit(_log_from(np.ones(3), np.zeros(2)))


def test_reduction_fit_uses_increments():
    # zeta_{l+1}^2 = 0.5 zeta_l^2 + d_l^2 exactly
    rng = np.random.default_rng(2)
    d = rng.uniform(0.01, 0.1, 30)
    z2 = [1.0]
    for dl in d:
        z2.append(0.5 * z2[-1] + dl**2)
    fit = estimator_reduction_fit(_log_from(np.sqrt(z2), d))
    assert fit.kappa < 1 and fit.fraction_satisfied >= 0.9
    a = np.array(z2[:-1]) / np.array(z2[1:])
    b = d**2 / np.array(z2[1:])
    assert np.mean(fit.kappa * a + fit.C * b >= 1 - 1e-10) == fit.fraction_satisfied

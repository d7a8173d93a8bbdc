"""Acceptance criteria 1-11 at desk scale (meshes up to 2e4 triangles).

Each test records one PASS/FAIL line, printed in the terminal summary.
"""

import math
from functools import lru_cache

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import ACCEPTANCE_RESULTS
from fembem.adapt import AdaptiveConfig, doerfler_mark, estimator_reduction_fit, run
from fembem.bem import Panels, assemble_operators
from fembem.coupling import CoupledSystem, CouplingMethod, SolverConfig, apply_system, energy_norm, solve, solve_stabilized
from fembem.estimate import EstimatorBreakdown
from fembem.fem import apply_nonlinear_form, assemble_stiffness
from fembem.mesh import MarkSet, build_initial, refine_nvb, refine_uniform, shape_regularity
from fembem.nonlinearity import make_anisotropic, make_benchmark_nonlinear, make_identity
from fembem.problems import make_problem
from fembem.rates import fit_rate
from oracles import brute_force_doerfler

pytestmark = pytest.mark.slow

METHODS = [m.value for m in CouplingMethod]
MAX_ELEMENTS = 20000


@lru_cache(maxsize=None)
def cached_run(problem: str, method: str, strategy: str, c: float = 0.25):
    cfg = AdaptiveConfig(method=method, theta=0.25, max_elements=MAX_ELEMENTS, strategy=strategy)
    return run(make_problem(problem, c=c), cfg)


def record(key: str, ok: bool, detail: str):
    ACCEPTANCE_RESULTS[key] = (bool(ok), detail)
    print(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


def rate_table(problem, bands):
    ok, parts = True, []
    for strategy, (lo, hi) in bands.items():
        for method in METHODS:
            log = cached_run(problem, method, strategy)
            assert not log.failed
            for q in ("err_omega", "est_omega"):
                a = fit_rate(log, q).alpha
                good = lo <= a <= hi
                ok &= good
                parts.append(f"{method}/{strategy[:3]}/{q.split('_')[0]}={a:.3f}{'' if good else '!'}")
    return ok, " ".join(parts)


def test_criterion_01_lshape_rates():
    ok, detail = rate_table("lshape-laplace", {"uniform": (0.28, 0.38), "adaptive": (0.45, 0.55)})
    record("1", ok, detail)


def test_criterion_02_zshape_nonlinear_rates():
    ok, detail = rate_table("zshape-nonlinear", {"uniform": (0.24, 0.33), "adaptive": (0.45, 0.55)})
    record("2", ok, detail)


def test_criterion_03_efficiency_index_stabilizes():
    ok, parts = True, []
    for method in METHODS:
        log = cached_run("lshape-laplace", method, "adaptive")
        idx = (log.column("est_omega") / log.column("err_omega"))[-8:]
        spread = idx.max() / idx.min()
        ok &= spread <= 1.5
        parts.append(f"{method}: max/min={spread:.3f} (index {idx[-1]:.2f})")
    record("3", ok, "; ".join(parts))


def test_criterion_04_small_ellipticity():
    ok, parts = True, []
    for problem in ("lshape-anisotropic", "zshape-unknown"):
        for c in (0.25, 0.001):
            for method in ("bmc", "jn"):
                log = cached_run(problem, method, "adaptive", c)
                a = fit_rate(log, "est_total").alpha
                good = (not log.failed) and 0.4 <= a <= 0.6
                ok &= good
                parts.append(f"{problem}/c={c:g}/{method}={a:.3f}{'' if good else '!'}")
    record("4", ok, " ".join(parts))


def test_criterion_05_stabilization_equivalence():
    problem = make_problem("lshape-laplace")
    mesh = build_initial("LShape")
    for _ in range(3):
        mesh = refine_uniform(mesh)
    ops = assemble_operators(mesh)
    worst, parts = 0.0, []
    for method in METHODS:
        system = CoupledSystem(method, mesh, problem.model, problem, ops)
        cfg = SolverConfig(tol=1e-13)
        plain = solve(method, mesh, problem.model, problem, cfg, operators=ops)
        stab = solve_stabilized(method, mesh, problem.model, problem, cfg, operators=ops)
        rel = energy_norm(system, plain.x - stab.x) / energy_norm(system, plain.x)
        worst = max(worst, rel)
        parts.append(f"{method}={rel:.1e}")
    record("5", worst <= 1e-8, "relative energy distance " + " ".join(parts))


def test_criterion_06_operator_identities(oracle_values):
    worst = {"(M/2+K)1": 0.0, "W1": 0.0, "V-V^T": 0.0}
    min_eig = np.inf
    count = 0
    for name in ("LShape", "ZShape"):
        mesh = build_initial(name)
        for _ in range(5):
            ops = assemble_operators(mesh)
            one = np.ones(ops.K.shape[1])
            worst["(M/2+K)1"] = max(worst["(M/2+K)1"], np.abs((0.5 * ops.M + ops.K) @ one).max() / np.abs(ops.K).max())
            worst["W1"] = max(worst["W1"], np.abs(ops.W @ one).max() / np.abs(ops.W).max())
            worst["V-V^T"] = max(worst["V-V^T"], np.abs(ops.V - ops.V.T).max() / np.abs(ops.V).max())
            min_eig = min(min_eig, np.linalg.eigvalsh(ops.V).min())
            count += 1
            mesh = refine_uniform(mesh)
    P = np.array(oracle_values["polygon"])
    ops = assemble_operators(Panels.from_polygon(P))
    Vo, Ko = np.array(oracle_values["V"]), np.array(oracle_values["K"])
    n = len(P)
    L = np.linalg.norm(np.roll(P, -1, axis=0) - P, axis=1)
    D = np.zeros((n, n))
    D[np.arange(n), (np.arange(n) + 1) % n] = 1 / L
    D[np.arange(n), np.arange(n)] = -1 / L
    Wo = D.T @ Vo @ D

    def rel(A, B):
        return np.max(np.abs(A - B) / np.maximum(np.abs(B), 1e-14 * np.abs(B).max()))

    oracle = {"V": rel(ops.V, Vo), "K": rel(ops.K, Ko), "W": rel(ops.W, Wo)}
    ok = all(v <= 1e-12 for v in worst.values()) and min_eig > 0 and all(v <= 1e-8 for v in oracle.values())
    detail = (f"{count} meshes: " + " ".join(f"{k}={v:.1e}" for k, v in worst.items())
              + f" min eig V={min_eig:.2e}; oracle rel " + " ".join(f"{k}={v:.1e}" for k, v in oracle.items()))
    record("6", ok, detail)


def test_criterion_07_quadratic_form_identity():
    mesh = refine_uniform(refine_uniform(build_initial("LShape")))
    ops = assemble_operators(mesh)
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(100):
        x = rng.normal(size=mesh.n_vertices + mesh.n_boundary_edges)
        bj = x @ apply_system("jn", mesh, make_identity(), ops, x)
        bb = x @ apply_system("bmc", mesh, make_identity(), ops, x)
        worst = max(worst, abs(bj - bb) / abs(bb))
    record("7", worst <= 1e-12, f"max relative |b_jn - b_bmc| over 100 vectors = {worst:.1e}")


_doerfler_failures = []

_vals = arrays(np.float64, st.integers(0, 9), elements=st.floats(0, 1e3, allow_nan=False, allow_subnormal=False))


@settings(max_examples=500, deadline=None)
@given(t=_vals, e=_vals, b=_vals, theta=st.floats(0.01, 1.0))
def _doerfler_property(t, e, b, theta):
    allv = np.concatenate([t, e, b])
    if allv.size == 0:
        return
    est = EstimatorBreakdown(t, e, b)
    marks, done = doerfler_mark(est, theta)
    if done:
        ok = allv.sum() == 0
    else:
        chosen = np.concatenate([t[marks.triangles], e[marks.interior_edges], b[marks.boundary_edges]])
        ok = math.fsum(chosen) >= theta * math.fsum(allv)
        ok &= math.fsum(np.sort(chosen)[1:]) < theta * math.fsum(allv)
        if allv.size <= 12:
            ok &= len(chosen) == brute_force_doerfler(allv, theta)
    if not ok:
        _doerfler_failures.append((t, e, b, theta))
    assert ok


def test_criterion_08_doerfler():
    try:
        _doerfler_property()
        ok = True
    except AssertionError:
        ok = False
    record("8", ok, "500 random indicator vectors: feasible, greedy-minimal, minimal cardinality"
           + ("" if ok else f"; counterexample {_doerfler_failures[-1]}"))


def test_criterion_09_mesh_invariants():
    sigma_ref = 0.0
    m = build_initial("LShape")
    for _ in range(5):
        sigma_ref = max(sigma_ref, shape_regularity(m))
        m = refine_uniform(m)
    rng = np.random.default_rng(9)
    mesh = build_initial("LShape")
    area = mesh.areas.sum()
    checks = {"conforming": True, "area": True, "halving": True, "nested": True, "sigma": True}
    sigma_max = shape_regularity(mesh)
    for _ in range(10):
        t = np.flatnonzero(rng.random(mesh.n_triangles) < 0.3)
        b = np.flatnonzero(rng.random(mesh.n_boundary_edges) < 0.1)
        fine = refine_nvb(mesh, MarkSet(triangles=t, boundary_edges=b))
        checks["conforming"] &= fine.is_conforming()
        checks["area"] &= abs(fine.areas.sum() - area) <= 1e-14
        split = np.bincount(fine.triangle_parent, minlength=mesh.n_triangles) > 1
        sons = split[fine.triangle_parent]
        checks["halving"] &= bool(np.all(fine.areas[sons] <= 0.5 * mesh.areas[fine.triangle_parent[sons]] * (1 + 1e-12)))
        checks["nested"] &= bool(np.array_equal(fine.vertices[: mesh.n_vertices], mesh.vertices))
        sigma_max = max(sigma_max, shape_regularity(fine))
        mesh = fine
    checks["sigma"] = sigma_max <= sigma_ref * (1 + 1e-12)
    detail = " ".join(f"{k}={'ok' if v else 'FAILED'}" for k, v in checks.items())
    record("9", all(checks.values()), f"{detail}; sigma max {sigma_max:.3f} vs uniform {sigma_ref:.3f}; "
           f"final #T={mesh.n_triangles}")


def test_criterion_10_estimator_reduction():
    ok, parts = True, []
    for method in METHODS:
        fit = estimator_reduction_fit(cached_run("lshape-laplace", method, "adaptive"))
        good = fit.kappa < 1 and fit.fraction_satisfied >= 0.9
        ok &= good
        parts.append(f"{method}: kappa={fit.kappa:.3f} C={fit.C:.3g} satisfied={100 * fit.fraction_satisfied:.1f}%")
    record("10", ok, "; ".join(parts))


def test_criterion_11_monotonicity():
    rng = np.random.default_rng(11)
    models = {"identity": make_identity(), "aniso(0.25)": make_anisotropic(0.25),
              "aniso(0.001)": make_anisotropic(0.001), "g-benchmark": make_benchmark_nonlinear()}
    y = rng.uniform(-100, 100, (10000, 2))
    z = rng.uniform(-100, 100, (10000, 2))
    dist2 = np.sum((y - z) ** 2, axis=1)
    meshes = [refine_uniform(build_initial("LShape")), refine_uniform(build_initial("ZShape"))]
    ok, parts = True, []
    for name, m in models.items():
        d = m(y) - m(z)
        pointwise = bool(np.all(np.sum(d * (y - z), axis=1) >= m.c_ell * dist2 * (1 - 1e-12)))
        lipschitz = bool(np.all(np.sum(d * d, axis=1) <= m.c_lip**2 * dist2 * (1 + 1e-12)))
        galerkin = True
        for mesh in meshes:
            S = assemble_stiffness(mesh)
            for _ in range(20):
                U, W = rng.normal(scale=rng.uniform(0.1, 10), size=(2, mesh.n_vertices))
                e = U - W
                lhs = (apply_nonlinear_form(mesh, m, U) - apply_nonlinear_form(mesh, m, W)) @ e
                galerkin &= lhs >= m.c_ell * (e @ (S @ e)) * (1 - 1e-10)
        good = pointwise and lipschitz and galerkin
        ok &= good
        parts.append(f"{name}:{'ok' if good else 'FAILED'}")
    record("11", ok, "1e4 pointwise pairs + 40 Galerkin pairs per model: " + " ".join(parts))

"""Quick randomized self-checks behind ``fembem verify``."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .adapt import doerfler_mark
from .bem import Panels, assemble_operators
from .coupling import CoupledSystem, CouplingMethod, energy_norm, solve, solve_stabilized
from .estimate import EstimatorBreakdown
from .fem import apply_nonlinear_form, assemble_stiffness
from .mesh import MarkSet, build_initial, refine_nvb, refine_uniform, shape_regularity
from .nonlinearity import make_anisotropic, make_benchmark_nonlinear, make_identity
from .problems import make_problem

__all__ = ["CheckResult", "SUITES", "verify"]


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str = ""


def _check(name: str, value: float, bound: float) -> CheckResult:
    return CheckResult(name, bool(value <= bound), f"{value:.3e} <= {bound:.1e}")


# ---------------------------------------------------------------- ops

def _benchmark_meshes():
    for name in ("LShape", "ZShape"):
        m = build_initial(name)
        yield name, m
        yield name + "+2", refine_uniform(refine_uniform(m))


def check_ops(rng: np.random.Generator) -> list[CheckResult]:
    out = []
    for label, mesh in _benchmark_meshes():
        ops = assemble_operators(mesh)
        one_b = np.ones(ops.K.shape[1])
        scale = np.abs(ops.M).max()
        out.append(_check(f"{label}: (M/2 + K) 1 = 0",
                          np.abs((0.5 * ops.M + ops.K) @ one_b).max() / scale, 1e-12))
        out.append(_check(f"{label}: W 1 = 0", np.abs(ops.W @ one_b).max() / np.abs(ops.W).max(), 1e-12))
        out.append(_check(f"{label}: V symmetric", np.abs(ops.V - ops.V.T).max() / np.abs(ops.V).max(), 1e-12))
        lam = np.linalg.eigvalsh(ops.V).min()
        out.append(CheckResult(f"{label}: V positive definite", bool(lam > 0), f"min eig {lam:.3e}"))
    p = Panels.from_polygon(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]))
    v00 = assemble_operators(p).V[0, 0]
    out.append(_check("unit panel V entry = 3/(4 pi)", abs(v00 - 3.0 / (4.0 * np.pi)), 1e-13))
    return out


# ----------------------------------------------------------- coupling

def check_coupling(rng: np.random.Generator) -> list[CheckResult]:
    out = []
    mesh = refine_uniform(build_initial("LShape"))
    ops = assemble_operators(mesh)
    ident = make_identity()
    bmc = CoupledSystem("bmc", mesh, ident, None, ops).linear_matrix(1.0)
    jn = CoupledSystem("jn", mesh, ident, None, ops).linear_matrix(1.0)
    worst = 0.0
    for _ in range(20):
        x = rng.standard_normal(bmc.shape[0])
        a, b = x @ (bmc @ x), x @ (jn @ x)
        worst = max(worst, abs(a - b) / max(abs(a), 1e-300))
    out.append(_check("b_jn(x, x) = b_bmc(x, x)", worst, 1e-12))

    problem = make_problem("lshape-laplace")
    for method in CouplingMethod:
        system = CoupledSystem(method, mesh, problem.model, problem, ops)
        x1 = solve(method, mesh, problem.model, problem).x
        x2 = solve_stabilized(method, mesh, problem.model, problem).x
        rel = energy_norm(system, x1 - x2) / energy_norm(system, x1)
        out.append(_check(f"{method.value}: stabilized = plain", rel, 1e-8))

    for label, model in (("g-benchmark", make_benchmark_nonlinear()), ("anisotropic 0.25", make_anisotropic(0.25))):
        y = rng.uniform(-100, 100, (10_000, 2))
        z = rng.uniform(-100, 100, (10_000, 2))
        d = y - z
        dA = model(y) - model(z)
        nd2 = np.sum(d * d, axis=1)
        lip = np.max(np.sum(dA * dA, axis=1) - model.c_lip**2 * nd2) / model.c_lip**2
        mono = np.max(model.c_ell * nd2 - np.sum(dA * d, axis=1))
        out.append(_check(f"{label}: Lipschitz bound", lip, 1e-12 * max(1.0, nd2.max())))
        out.append(_check(f"{label}: pointwise monotonicity", mono, 1e-12 * max(1.0, nd2.max())))
        S = assemble_stiffness(mesh)
        gap = -np.inf
        for _ in range(20):
            U, W = rng.standard_normal((2, mesh.n_vertices))
            e = U - W
            lhs = (apply_nonlinear_form(mesh, model, U) - apply_nonlinear_form(mesh, model, W)) @ e
            gap = max(gap, model.c_ell * (e @ (S @ e)) - lhs)
        out.append(_check(f"{label}: Galerkin monotonicity", gap, 1e-10))
    return out


# -------------------------------------------------------------- adapt

def check_adapt(rng: np.random.Generator) -> list[CheckResult]:
    out = []
    bad = 0
    for _ in range(200):
        n = rng.integers(1, 30, size=3)
        est = EstimatorBreakdown(rng.random(n[0]) ** 3, rng.random(n[1]) ** 3, rng.random(n[2]) ** 3)
        theta = rng.uniform(0.01, 1.0)
        marks, _ = doerfler_mark(est, theta)
        chosen = np.concatenate([est.triangles[marks.triangles], est.interior[marks.interior_edges],
                                 est.boundary[marks.boundary_edges]])
        goal = theta * est.total_sq
        ok = math.fsum(chosen) >= goal
        ok &= math.fsum(np.sort(chosen)[1:]) < goal
        bad += not ok
    out.append(CheckResult("Doerfler sets feasible and minimal", bad == 0, f"{bad} failures in 200"))

    mesh = build_initial("LShape")
    area = mesh.areas.sum()
    sigma0 = shape_regularity(mesh)
    worst_area, conforming, sigma = 0.0, True, sigma0
    for _ in range(10):
        t = np.nonzero(rng.random(mesh.n_triangles) < 0.3)[0]
        mesh = refine_nvb(mesh, MarkSet(triangles=t))
        worst_area = max(worst_area, abs(mesh.areas.sum() - area))
        conforming &= mesh.is_conforming()
        sigma = max(sigma, shape_regularity(mesh))
    out.append(_check("NVB area conservation", worst_area, 1e-14))
    out.append(CheckResult("NVB conformity", bool(conforming)))
    out.append(_check("NVB shape regularity bounded", sigma / sigma0, 4.0))
    return out


SUITES: dict[str, Callable[[np.random.Generator], list[CheckResult]]] = {
    "ops": check_ops,
    "coupling": check_coupling,
    "adapt": check_adapt,
}


def verify(suite: str = "all", seed: int = 0) -> list[CheckResult]:
    """Run one suite (or all) and return the individual results."""
    if suite != "all" and suite not in SUITES:
        raise ValueError(f"unknown suite {suite!r}; expected one of {sorted(SUITES)} or 'all'")
    rng = np.random.default_rng(seed)
    names = list(SUITES) if suite == "all" else [suite]
    results = []
    for name in names:
        results.extend(SUITES[name](rng))
    return results

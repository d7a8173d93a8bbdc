"""Adaptive solve-estimate-mark-refine loop and its diagnostics."""

from __future__ import annotations

import csv
import math
import time
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import linprog

from .bem import assemble_operators
from .coupling import (
    CoupledSystem,
    CouplingMethod,
    SolverConfig,
    SolverError,
    _solve_system,
    energy_norm,
)
from .estimate import EstimatorBreakdown, estimate
from .fem import h1_error
from .mesh import MarkSet, Mesh, prolongate, prolongate_boundary, refine_nvb, refine_uniform
from .problems import ProblemSpec, compatibility_defect

__all__ = [
    "AdaptiveConfig",
    "LevelRecord",
    "RunLog",
    "doerfler_mark",
    "run",
    "estimator_reduction_fit",
    "RUNLOG_COLUMNS",
]

RUNLOG_COLUMNS = (
    "level",
    "n_triangles",
    "n_boundary_edges",
    "h_max",
    "err_omega",
    "est_total",
    "est_omega",
    "est_gamma",
    "solver_iters",
    "time_seconds",
    "flags",
)

_KIND_ORDER = {"triangle": 0, "interior": 1, "boundary": 2}


@dataclass
class AdaptiveConfig:
    method: CouplingMethod = CouplingMethod.JN
    theta: float = 0.25
    max_elements: int = 20000
    solver: SolverConfig = field(default_factory=SolverConfig)
    strategy: str = "adaptive"
    stabilized: bool = False

    def __post_init__(self):
        self.method = CouplingMethod.parse(self.method)
        if not 0.0 < self.theta <= 1.0:
            raise ValueError("theta must lie in (0, 1]")
        if self.strategy not in ("adaptive", "uniform"):
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.theta == 1.0:
            self.strategy = "uniform"


@dataclass
class LevelRecord:
    level: int
    n_triangles: int
    n_boundary_edges: int
    h_max: float
    err_omega: Optional[float]
    est_total: float
    est_omega: float
    est_gamma: float
    solver_iters: int
    time_seconds: float
    flags: str = ""

    def row(self) -> list:
        return [
            self.level,
            self.n_triangles,
            self.n_boundary_edges,
            repr(self.h_max),
            "" if self.err_omega is None else repr(self.err_omega),
            repr(self.est_total),
            repr(self.est_omega),
            repr(self.est_gamma),
            self.solver_iters,
            repr(self.time_seconds),
            self.flags,
        ]


@dataclass
class RunLog:
    """Per-level records of one run, plus energy increments between levels.

    ``increments[l]`` is the norm of ``x_{l+1} - inject(x_l)`` on level l+1.
    """

    rows: list = field(default_factory=list)
    increments: list = field(default_factory=list)
    meshes: list = field(default_factory=list)
    estimators: list = field(default_factory=list)
    failed: bool = False
    problem: str = ""
    method: str = ""
    strategy: str = ""

    def column(self, name: str) -> np.ndarray:
        vals = [getattr(r, name) for r in self.rows]
        return np.array([np.nan if v is None else v for v in vals], dtype=float)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(RUNLOG_COLUMNS)
            for r in self.rows:
                w.writerow(r.row())

    @classmethod
    def read_csv(cls, path) -> "RunLog":
        log = cls()
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            missing = set(RUNLOG_COLUMNS) - set(reader.fieldnames or [])
            if missing:
                raise ValueError(f"run log lacks columns {sorted(missing)}")
            for d in reader:
                log.rows.append(LevelRecord(
                    level=int(d["level"]),
                    n_triangles=int(d["n_triangles"]),
                    n_boundary_edges=int(d["n_boundary_edges"]),
                    h_max=float(d["h_max"]),
                    err_omega=float(d["err_omega"]) if d["err_omega"] else None,
                    est_total=float(d["est_total"]),
                    est_omega=float(d["est_omega"]),
                    est_gamma=float(d["est_gamma"]),
                    solver_iters=int(d["solver_iters"]),
                    time_seconds=float(d["time_seconds"]),
                    flags=d["flags"],
                ))
        return log


# ------------------------------------------------------------- marking

def doerfler_mark(est: EstimatorBreakdown, theta: float):
    """Greedy minimal Doerfler marking.

    Returns ``(marks, converged)``; ``converged`` is True (with an empty
    mark set) when the estimator vanishes.
    """
    if not 0.0 < theta <= 1.0:
        raise ValueError("theta must lie in (0, 1]")
    vals = np.concatenate([est.triangles, est.interior, est.boundary])
    kinds = np.concatenate([
        np.zeros(len(est.triangles), dtype=np.int64),
        np.ones(len(est.interior), dtype=np.int64),
        np.full(len(est.boundary), 2, dtype=np.int64),
    ])
    ids = np.concatenate([np.arange(len(est.triangles)), np.arange(len(est.interior)), np.arange(len(est.boundary))])
    if np.any(vals < 0) or not np.all(np.isfinite(vals)):
        raise ValueError("indicators must be finite and non-negative")
    total = math.fsum(vals)
    if total == 0.0:
        return MarkSet(), True
    order = np.lexsort((ids, kinds, -vals))
    csum = np.cumsum(vals[order])
    goal = theta * total
    k = int(np.searchsorted(csum, goal * (1.0 - 1e-12)))
    k = min(k, len(order) - 1)
    # settle the cut with exact summation
    while k > 0 and math.fsum(vals[order[:k]]) >= goal:
        k -= 1
    while math.fsum(vals[order[: k + 1]]) < goal and k < len(order) - 1:
        k += 1
    chosen = order[: k + 1]
    ck, ci = kinds[chosen], ids[chosen]
    return MarkSet(ci[ck == 0], ci[ck == 1], ci[ck == 2]), False


# ---------------------------------------------------------------- loop

def _inject(coarse: Mesh, fine: Mesh, x: np.ndarray) -> np.ndarray:
    nV = coarse.n_vertices
    return np.concatenate([prolongate(fine, x[:nV]), prolongate_boundary(fine, x[nV:])])


def run(problem: ProblemSpec, cfg: AdaptiveConfig, keep_meshes: bool = False, mesh: Mesh | None = None) -> RunLog:
    """Adaptive (or uniform) loop until the next mesh exceeds ``cfg.max_elements`` triangles.

    Level 0 is always solved and logged. Solver failure adds a flagged row
    and aborts the loop.
    """
    log = RunLog(problem=problem.name, method=cfg.method.value, strategy=cfg.strategy)
    mesh = mesh if mesh is not None else problem.initial_mesh()
    base_flags = []
    defect = compatibility_defect(problem, mesh)
    if abs(defect) > 1e-8:
        base_flags.append("incompatible_data")
        if problem.compatible:
            warnings.warn(f"compatibility defect {defect:.3e} for {problem.name}")
    if problem.model.small_ellipticity and cfg.method is not CouplingMethod.SYM:
        base_flags.append("small_c_ell")

    x_prev = None
    prev_mesh = None
    elapsed = 0.0
    refine_total = 0.0  # uniform: cost of refining T_0 up to the current level
    level = 0
    while True:
        t0 = time.perf_counter()
        system = CoupledSystem(cfg.method, mesh, problem.model, problem, assemble_operators(mesh))
        x0 = _inject(prev_mesh, mesh, x_prev) if x_prev is not None else None
        flags = list(base_flags)
        try:
            sol = _solve_system(system, cfg.solver, cfg.stabilized, x0)
        except SolverError as exc:
            flags.append(exc.reason)
            log.rows.append(LevelRecord(level, mesh.n_triangles, mesh.n_boundary_edges, mesh.h_max, None,
                                        math.nan, math.nan, math.nan, 0, elapsed, ";".join(flags)))
            log.failed = True
            break
        est = estimate(cfg.method, mesh, problem.model, problem, sol, system)
        t_level = time.perf_counter() - t0
        # adaptive timing accumulates; uniform timing is refine-from-T_0 plus this level's work
        elapsed = elapsed + t_level if cfg.strategy == "adaptive" else refine_total + t_level
        err = None
        if problem.has_exact:
            err = h1_error(mesh, sol.U, problem.exact_u, problem.exact_grad_u, problem.singular_points)
        if not sol.converged:
            flags.append(sol.reason)
        if x_prev is not None:
            log.increments.append(energy_norm(system, sol.x - x0))
        log.rows.append(LevelRecord(level, mesh.n_triangles, mesh.n_boundary_edges, mesh.h_max, err,
                                    est.total, est.omega, est.gamma, sol.iterations, elapsed, ";".join(flags)))
        log.estimators.append(est)
        if keep_meshes:
            log.meshes.append(mesh)
        if not sol.converged:
            log.failed = True
            break

        t1 = time.perf_counter()
        if cfg.strategy == "uniform":
            new_mesh = refine_uniform(mesh)
        else:
            marks, converged = doerfler_mark(est, cfg.theta)
            if converged:
                log.rows[-1].flags = ";".join(flags + ["converged"])
                break
            new_mesh = refine_nvb(mesh, marks)
        if new_mesh.n_triangles > cfg.max_elements:
            break
        if cfg.strategy == "adaptive":
            elapsed += time.perf_counter() - t1
        else:
            refine_total += time.perf_counter() - t1
        x_prev, prev_mesh, mesh = sol.x, mesh, new_mesh
        level += 1
    return log


# --------------------------------------------------------- diagnostics

@dataclass(frozen=True)
class ReductionFit:
    kappa: float
    C: float
    fraction_satisfied: float
    feasible_below_one: bool

    def __iter__(self):
        return iter((self.kappa, self.C))


def estimator_reduction_fit(log: RunLog, increments=None, quantile: float = 0.95,
                            slack_tol: float = 1e-10) -> ReductionFit:
    """Fit ``zeta_{l+1}^2 <= kappa zeta_l^2 + C d_l^2`` over all level pairs.

    Each inequality is divided by ``zeta_{l+1}^2``. The fit is the upper
    ``quantile`` envelope: a linear program over ``kappa, C >= 0`` that
    charges the excess ``kappa a + C b - 1`` with weight 1 and a violation
    with weight ``quantile / (1 - quantile)``, so at most a fraction of
    roughly ``1 - quantile`` of the levels may violate the fitted bound.
    """
    if not 0.0 < quantile < 1.0:
        raise ValueError("quantile must lie in (0, 1)")
    zeta = log.column("est_total")
    d = np.asarray(log.increments if increments is None else increments, dtype=float)
    n = len(zeta) - 1
    if n < 4 or len(d) < n:
        raise ValueError("estimator reduction fit needs at least 5 levels with increments")
    d = d[:n]
    a = zeta[:-1] ** 2 / zeta[1:] ** 2
    b = d**2 / zeta[1:] ** 2
    # variables: kappa, C, s_1..s_n ; constraint kappa a + C b + s >= 1
    weight = quantile / (1.0 - quantile)
    c = np.concatenate([[a.sum(), b.sum()], np.full(n, 1.0 + weight)])
    A_ub = np.hstack([-a[:, None], -b[:, None], -np.eye(n)])
    b_ub = -np.ones(n)
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, bounds=[(0, None)] * (n + 2), method="highs")
    if not res.success:
        raise RuntimeError(f"reduction fit failed: {res.message}")
    kappa, C = float(res.x[0]), float(res.x[1])
    ok = kappa * a + C * b >= 1.0 - slack_tol
    return ReductionFit(kappa, C, float(np.mean(ok)), kappa < 1.0)

"""
Discrete FEM-BEM coupled systems (Bielak-MacCamy, Johnson-Nedelec,
symmetric), their rank-one stabilized variants, and Newton / damped
Picard solvers.

Unknowns are stacked as ``x = [U (nodal, all vertices), Phi (P0 on boundary)]``.
"""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .bem import OperatorSet, assemble_operators
from .fem import (
    GAUSS4,
    VolumeData,
    apply_nonlinear_form,
    assemble_linearized_stiffness,
    assemble_load,
    assemble_mass,
    assemble_stiffness,
    boundary_points,
)
from .mesh import Mesh
from .nonlinearity import CoefficientModel, make_anisotropic

__all__ = [
    "CouplingMethod",
    "SolverConfig",
    "CoupledSolution",
    "CoupledSystem",
    "SolverError",
    "assemble_rhs",
    "apply_system",
    "solve",
    "solve_stabilized",
    "energy_norm",
]


class CouplingMethod(str, enum.Enum):
    BMC = "bmc"
    JN = "jn"
    SYM = "sym"

    @classmethod
    def parse(cls, value) -> "CouplingMethod":
        if isinstance(value, cls):
            return value
        v = str(value).strip().lower()
        aliases = {"bielakmaccamy": "bmc", "johnsonnedelec": "jn", "symmetric": "sym"}
        return cls(aliases.get(v.replace("-", "").replace("_", ""), v))


@dataclass
class SolverConfig:
    """Nonlinear solver settings.

    ``strategy`` is ``"newton"`` or ``"picard"``. ``damping`` defaults to
    ``c_ell / c_lip**2`` for Picard. ``max_iter`` defaults to 50 Newton
    steps or 2000 Picard steps.
    """

    tol: float = 1e-10
    max_iter: Optional[int] = None
    strategy: str = "newton"
    damping: Optional[float] = None

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.strategy not in ("newton", "picard"):
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.damping is not None and not self.damping > 0:
            raise ValueError("damping must be positive")

    @property
    def iterations_limit(self) -> int:
        if self.max_iter is not None:
            return self.max_iter
        return 50 if self.strategy == "newton" else 2000


class SolverError(RuntimeError):
    """Raised on a singular linear system; ``reason`` is a machine-readable code."""

    def __init__(self, message: str, reason: str = "SingularSystem"):
        super().__init__(message)
        self.reason = reason


@dataclass
class CoupledSolution:
    U: np.ndarray
    Phi: np.ndarray
    iterations: int
    final_residual: float
    converged: bool = True
    reason: str = ""
    flags: list = field(default_factory=list)
    residual_history: list = field(default_factory=list)

    @property
    def x(self) -> np.ndarray:
        return np.concatenate([self.U, self.Phi])


class _Data:
    """Adapter exposing ``f``, ``u0``, ``phi0`` from any object with those attributes."""

    def __init__(self, data):
        self.f = getattr(data, "f", None)
        self.u0 = getattr(data, "u0", None)
        self.phi0 = getattr(data, "phi0", None)


class CoupledSystem:
    """Discrete coupled operator for one method on one mesh.

    Holds the BEM matrices, the boundary trace map and the assembled
    right-hand side; evaluates the (nonlinear) residual and its Jacobian.
    """

    def __init__(self, method, mesh: Mesh, model: CoefficientModel, data=None,
                 operators: Optional[OperatorSet] = None):
        self.method = CouplingMethod.parse(method)
        self.mesh = mesh
        self.model = model
        self.data = _Data(data) if data is not None else _Data(None)
        self.ops = operators if operators is not None else assemble_operators(mesh)
        self.nV = mesh.n_vertices
        self.nE = mesh.n_boundary_edges
        self.bnodes = mesh.boundary_nodes

    # ---------------------------------------------------------- blocks
    @cached_property
    def trace(self) -> sp.csr_matrix:
        """(nB, nV) restriction of nodal vectors to boundary nodes."""
        nB = len(self.bnodes)
        return sp.csr_matrix((np.ones(nB), (np.arange(nB), self.bnodes)), shape=(nB, self.nV))

    @cached_property
    def blocks(self):
        """Dense coupling blocks ``(B12, B21, B22, Wb)`` in boundary numbering.

        Row block 1 gets ``T @ B12 @ Phi + T @ Wb @ U_gamma``, row block 2
        gets ``B21 @ U_gamma + B22 @ Phi``.
        """
        V, K, M, W = self.ops.V, self.ops.K, self.ops.M, self.ops.W
        nB = len(self.bnodes)
        if self.method is CouplingMethod.BMC:
            return (0.5 * M.T - K.T, -M, V, None)
        if self.method is CouplingMethod.JN:
            return (-M.T, 0.5 * M - K, V, None)
        return (K.T - 0.5 * M.T, 0.5 * M - K, V, W)

    @cached_property
    def stabilization_vector(self) -> np.ndarray:
        """``g`` such that the stabilization term is ``(g.x)(g.y)`` with xi = 1."""
        one = np.ones(self.nE)
        B12, B21, B22, _ = self.blocks
        g = np.zeros(self.nV + self.nE)
        g[self.bnodes] = B21.T @ one
        g[self.nV:] = B22 @ one
        return g

    # ------------------------------------------------------------ data
    def u0_interpolant(self) -> np.ndarray:
        """Nodal values of u0 at boundary nodes (boundary numbering)."""
        if self.data.u0 is None:
            return np.zeros(len(self.bnodes))
        return np.asarray(self.data.u0(self.mesh.vertices[self.bnodes]), dtype=float)

    def u0_edge_means(self) -> np.ndarray:
        """``<chi_E, u0>`` by 4-point Gauss."""
        if self.data.u0 is None:
            return np.zeros(self.nE)
        pts, _, w = boundary_points(self.mesh)
        return np.sum(w * self.data.u0(pts), axis=1)

    @cached_property
    def rhs(self) -> np.ndarray:
        l1, l2 = assemble_rhs(self.method, self.mesh, self.data, self)
        return np.concatenate([l1, l2])

    # ------------------------------------------------------- operators
    def apply(self, x) -> np.ndarray:
        U, Phi = x[: self.nV], x[self.nV:]
        B12, B21, B22, Wb = self.blocks
        Ug = U[self.bnodes]
        r1 = apply_nonlinear_form(self.mesh, self.model, U)
        bterm = B12 @ Phi
        if Wb is not None:
            bterm = bterm + Wb @ Ug
        r1[self.bnodes] += bterm
        r2 = B21 @ Ug + B22 @ Phi
        return np.concatenate([r1, r2])

    def _matrix(self, fem_block: sp.spmatrix) -> sp.csc_matrix:
        B12, B21, B22, Wb = self.blocks
        T = self.trace
        A11 = fem_block
        if Wb is not None:
            A11 = A11 + T.T @ sp.csr_matrix(Wb) @ T
        A12 = T.T @ sp.csr_matrix(B12)
        A21 = sp.csr_matrix(B21) @ T
        return sp.bmat([[A11, A12], [A21, sp.csr_matrix(B22)]], format="csc")

    def jacobian(self, x) -> sp.csc_matrix:
        return self._matrix(assemble_linearized_stiffness(self.mesh, self.model, x[: self.nV]))

    def linear_matrix(self, scale: float) -> sp.csc_matrix:
        """System matrix with A replaced by ``scale * Id``."""
        return self._matrix(assemble_stiffness(self.mesh, scale))


def assemble_rhs(method, mesh: Mesh, data, system: Optional[CoupledSystem] = None):
    """Right-hand side ``(l1, l2)`` of the coupled system.

    ``data`` provides ``f``, ``u0`` and ``phi0`` (any may be None).
    """
    method = CouplingMethod.parse(method)
    data = data if isinstance(data, _Data) else _Data(data)
    if system is None:
        system = CoupledSystem(method, mesh, make_anisotropic(1.0), None)
        system.data = data
    l1 = assemble_load(mesh, VolumeData(data.f, data.phi0))
    ops = system.ops
    if method is CouplingMethod.BMC:
        l2 = -system.u0_edge_means()
    else:
        u0h = system.u0_interpolant()
        l2 = (0.5 * ops.M - ops.K) @ u0h
        if method is CouplingMethod.SYM:
            l1[system.bnodes] += ops.W @ u0h
    return l1, l2


def apply_system(method, mesh: Mesh, model: CoefficientModel, operators: Optional[OperatorSet], x) -> np.ndarray:
    """Evaluate ``b_method(x, .)`` against all basis functions."""
    return CoupledSystem(method, mesh, model, None, operators).apply(np.asarray(x, dtype=float))


def energy_norm(system: CoupledSystem, x) -> float:
    """``(||grad w||^2 + ||w||^2 + <psi, V psi>)^(1/2)`` for ``x = (w, psi)``."""
    U, Phi = x[: system.nV], x[system.nV:]
    S = assemble_stiffness(system.mesh)
    M = assemble_mass(system.mesh)
    val = U @ (S @ U) + U @ (M @ U) + Phi @ (system.ops.V @ Phi)
    return float(np.sqrt(max(val, 0.0)))


def _factorize(A: sp.csc_matrix):
    with warnings.catch_warnings():
        warnings.simplefilter("error", sp.linalg.MatrixRankWarning)
        try:
            lu = spla.splu(A)
        except (RuntimeError, sp.linalg.MatrixRankWarning) as exc:
            raise SolverError(f"singular coupled system: {exc}") from None
    return lu


def _linsolve(lu, b):
    x = lu.solve(b)
    if not np.all(np.isfinite(x)):
        raise SolverError("singular coupled system: non-finite solution")
    return x


def _solve_system(system: CoupledSystem, cfg: SolverConfig, stabilized: bool, x0=None) -> CoupledSolution:
    rhs = system.rhs.copy()
    g = None
    if stabilized:
        g = system.stabilization_vector
        rhs = rhs + rhs[system.nV:].sum() * g

    def residual(x):
        r = system.apply(x) - rhs
        if g is not None:
            r += (g @ x) * g
        return r

    flags = []
    if system.model.small_ellipticity and system.method is not CouplingMethod.SYM:
        flags.append("small_c_ell")
    scale = np.linalg.norm(rhs)
    n = system.nV + system.nE
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    r = residual(x)
    res = np.linalg.norm(r)
    history = [res]
    if scale == 0.0:
        scale = 1.0
    target = cfg.tol * scale

    def done(it, ok, reason=""):
        return CoupledSolution(x[: system.nV].copy(), x[system.nV:].copy(), it, res / scale,
                               ok, reason, flags, history)

    if res <= target:
        return done(0, True)

    if cfg.strategy == "newton":
        linear = system.model.linear
        lu = None
        for it in range(1, cfg.iterations_limit + 1):
            if lu is None or not linear:
                J = system.jacobian(x)
                if g is not None:
                    J = _add_rank_one(J, g)
                lu = _factorize(J)
            dx = _linsolve(lu, -r)
            step = 1.0
            while True:
                xn = x + step * dx
                rn = residual(xn)
                resn = np.linalg.norm(rn)
                if resn <= (1.0 - 1e-4 * step) * res or step < 1.0 / 64 or linear:
                    break
                step *= 0.5
            x, r, res = xn, rn, resn
            history.append(res)
            if res <= target:
                return done(it, True)
        return done(cfg.iterations_limit, False, "MaxIter")

    # damped Picard with the c_ell-scaled linear operator as preconditioner
    model = system.model
    delta = cfg.damping if cfg.damping is not None else model.c_ell / model.c_lip**2
    P = system.linear_matrix(model.c_ell)
    if g is not None:
        P = _add_rank_one(P, g)
    lu = _factorize(P)
    max_iter = cfg.iterations_limit
    for it in range(1, max_iter + 1):
        x = x - delta * _linsolve(lu, r)
        r = residual(x)
        res = np.linalg.norm(r)
        history.append(res)
        if res <= target:
            return done(it, True)
        if not np.isfinite(res):
            break
    return done(max_iter, False, "MaxIter")


def _add_rank_one(J: sp.spmatrix, g: np.ndarray) -> sp.csc_matrix:
    idx = np.flatnonzero(g)
    gi = g[idx]
    R = sp.csc_matrix((np.outer(gi, gi).ravel(), (np.repeat(idx, len(idx)), np.tile(idx, len(idx)))),
                      shape=J.shape)
    return (J + R).tocsc()


def solve(method, mesh: Mesh, model: CoefficientModel, data, cfg: Optional[SolverConfig] = None,
          x0=None, operators: Optional[OperatorSet] = None) -> CoupledSolution:
    """Solve the plain coupled Galerkin system.

    Raises
    ------
    SolverError
        if a linear system is singular (reason ``"SingularSystem"``).
    """
    cfg = cfg or SolverConfig()
    system = CoupledSystem(method, mesh, model, data, operators)
    return _solve_system(system, cfg, False, x0)


def solve_stabilized(method, mesh: Mesh, model: CoefficientModel, data, cfg: Optional[SolverConfig] = None,
                     x0=None, operators: Optional[OperatorSet] = None) -> CoupledSolution:
    """Solve the rank-one stabilized system (xi = 1); same solution as :func:`solve`."""
    cfg = cfg or SolverConfig()
    system = CoupledSystem(method, mesh, model, data, operators)
    return _solve_system(system, cfg, True, x0)

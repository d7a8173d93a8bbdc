"""Residual error estimators for the three coupling methods."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .bem import (
    Panels,
    arclength_derivative,
    eval_K_arcderiv,
    eval_Kadj,
    eval_V_arcderiv,
    eval_W,
)
from .coupling import CoupledSolution, CoupledSystem, CouplingMethod
from .fem import GAUSS4, _guarded_points, boundary_points, gradients_per_triangle
from .mesh import Mesh

__all__ = ["EstimatorBreakdown", "estimate", "efficiency_index", "write_indicators"]


@dataclass(frozen=True)
class EstimatorBreakdown:
    """Squared refinement indicators and their totals.

    ``interior`` is indexed like ``mesh.interior_edge_ids`` and
    ``boundary`` like ``mesh.boundary``.
    """

    triangles: np.ndarray
    interior: np.ndarray
    boundary: np.ndarray

    @property
    def omega_sq(self) -> float:
        return math.fsum(self.triangles) + math.fsum(self.interior)

    @property
    def gamma_sq(self) -> float:
        return math.fsum(self.boundary)

    @property
    def total_sq(self) -> float:
        return math.fsum(np.concatenate([self.triangles, self.interior, self.boundary]))

    @property
    def omega(self) -> float:
        return math.sqrt(self.omega_sq)

    @property
    def gamma(self) -> float:
        return math.sqrt(self.gamma_sq)

    @property
    def total(self) -> float:
        return math.sqrt(self.total_sq)


def _fluxes(mesh: Mesh, model, U) -> np.ndarray:
    return model.apply(gradients_per_triangle(mesh, U))


def volume_indicators(mesh: Mesh, model, f, U):
    """Triangle residuals ``h_T^2 ||f||^2`` and interior flux jumps ``h_E ||[A grad U . n]||^2``."""
    if f is None:
        tri = np.zeros(mesh.n_triangles)
    else:
        fv, w = _guarded_points(mesh, f)
        tri = mesh.areas * np.sum(w * fv**2, axis=1)
    flux = _fluxes(mesh, model, U)
    ids = mesh.interior_edge_ids
    e = mesh.edges[ids]
    t = mesh.edge_triangles[ids]
    d = mesh.vertices[e[:, 1]] - mesh.vertices[e[:, 0]]
    length = np.hypot(d[:, 0], d[:, 1])
    n = np.stack([d[:, 1], -d[:, 0]], axis=1) / length[:, None]
    jump = np.sum((flux[t[:, 0]] - flux[t[:, 1]]) * n, axis=1)
    return tri, length**2 * jump**2


def boundary_residuals(system: CoupledSystem, data, sol: CoupledSolution):
    """Pointwise boundary residuals ``(r_flux, r_trace)`` at Gauss points, shape (nB, 4)."""
    mesh = system.mesh
    method = system.method
    panels: Panels = system.ops.panels
    pts, s, _ = boundary_points(mesh)
    nB, q = pts.shape[:2]
    panel = np.repeat(np.arange(nB), q)
    x = pts.reshape(-1, 2)
    nrm = mesh.boundary_normals
    tau = mesh.boundary_tangents
    nrm_q = np.broadcast_to(nrm[:, None, :], pts.shape)
    tau_q = np.broadcast_to(tau[:, None, :], pts.shape)

    flux = _fluxes(mesh, system.model, sol.U)[mesh.boundary_owner]
    flux_n = np.sum(flux * nrm, axis=1)[:, None]
    phi0 = data.phi0(pts, nrm_q) if data.phi0 is not None else np.zeros((nB, q))
    du0 = data.u0_dtau(pts, tau_q) if getattr(data, "u0_dtau", None) is not None else np.zeros((nB, q))
    Phi = sol.Phi
    Ug = sol.U[system.bnodes]
    dU = arclength_derivative(panels, Ug)[:, None]
    dVPhi = eval_V_arcderiv(panels, Phi, x, panel).reshape(nB, q)
    Ph = Phi[:, None]

    if method is CouplingMethod.BMC:
        Kp = eval_Kadj(panels, Phi, x, panel).reshape(nB, q)
        r_flux = phi0 + Kp - 0.5 * Ph - flux_n
        r_trace = dU - du0 - dVPhi
        return r_flux, r_trace

    u0h = system.u0_interpolant()
    diff = u0h - Ug
    dK = eval_K_arcderiv(panels, diff, x, panel).reshape(nB, q)
    r_trace = 0.5 * (du0 - dU) - dK - dVPhi
    if method is CouplingMethod.JN:
        r_flux = phi0 + Ph - flux_n
    else:
        Wd = eval_W(panels, diff, x, panel).reshape(nB, q)
        Kp = eval_Kadj(panels, Phi, x, panel).reshape(nB, q)
        r_flux = phi0 - flux_n + Wd - Kp + 0.5 * Ph
    return r_flux, r_trace


def estimate(method, mesh: Mesh, model, data, sol: CoupledSolution, system: CoupledSystem | None = None
             ) -> EstimatorBreakdown:
    """Residual estimator (rho, eta or mu depending on ``method``).

    ``data`` must provide ``f``, ``u0``, ``phi0`` and ``u0_dtau`` (the
    arclength derivative of u0 given points and unit tangents).
    """
    method = CouplingMethod.parse(method)
    if system is None or system.method is not method or system.mesh is not mesh:
        system = CoupledSystem(method, mesh, model, data)
    tri, inner = volume_indicators(mesh, model, data.f, sol.U)
    r_flux, r_trace = boundary_residuals(system, data, sol)
    w = GAUSS4[1]
    L = mesh.boundary_lengths
    bnd = L * L * ((r_flux**2) @ w + (r_trace**2) @ w)
    return EstimatorBreakdown(tri, inner, bnd)


def efficiency_index(est: EstimatorBreakdown, err_omega: float) -> float:
    """``zeta_Omega / err_Omega``."""
    if not err_omega > 0:
        raise ValueError("efficiency index undefined for zero error")
    return est.omega / err_omega


def write_indicators(est: EstimatorBreakdown, path) -> None:
    """CSV dump with columns entity_kind, entity_id, indicator_sq."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["entity_kind", "entity_id", "indicator_sq"])
        for kind, arr in (("triangle", est.triangles), ("interior_edge", est.interior), ("boundary_edge", est.boundary)):
            for i, v in enumerate(arr):
                w.writerow([kind, i, repr(float(v))])

"""P1 finite elements: nonlinear form, linearized stiffness, loads and H1 errors."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from .mesh import Mesh
from .nonlinearity import CoefficientModel

__all__ = [
    "VolumeData",
    "TRI_RULE",
    "GAUSS4",
    "triangle_points",
    "boundary_points",
    "gradients_per_triangle",
    "apply_nonlinear_form",
    "assemble_linearized_stiffness",
    "assemble_stiffness",
    "assemble_mass",
    "assemble_load",
    "h1_seminorm_error",
    "h1_error",
    "l2_error",
    "integrate_per_triangle",
    "integrate_per_boundary_edge",
]


def _tri_rule():
    # 7-point rule, exact for degree 5
    s15 = np.sqrt(15.0)
    a1 = (6.0 - s15) / 21.0
    a2 = (6.0 + s15) / 21.0
    w1 = (155.0 - s15) / 1200.0
    w2 = (155.0 + s15) / 1200.0
    bary = [(1 / 3, 1 / 3, 1 / 3)]
    weights = [9.0 / 40.0]
    for a, w in ((a1, w1), (a2, w2)):
        b = 1.0 - 2.0 * a
        bary += [(b, a, a), (a, b, a), (a, a, b)]
        weights += [w, w, w]
    return np.array(bary), np.array(weights)


TRI_RULE = _tri_rule()
"""Barycentric points (7, 3) and weights summing to 1."""

_g4, _w4 = np.polynomial.legendre.leggauss(4)
GAUSS4 = (0.5 * (_g4 + 1.0), 0.5 * _w4)
"""4-point Gauss-Legendre rule on [0, 1], weights summing to 1."""


@dataclass(frozen=True)
class VolumeData:
    """Volume source ``f`` and Neumann-type jump datum ``phi0``.

    ``f(x)`` takes points (..., 2). ``phi0(x, normal)`` takes boundary points
    and the outward normals there.
    """

    f: Optional[Callable[[np.ndarray], np.ndarray]] = None
    phi0: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None


def triangle_points(mesh: Mesh, rule=TRI_RULE):
    """Quadrature points (nT, q, 2) and weights (nT, q) including |T|."""
    bary, w = rule
    p = mesh.vertices[mesh.triangles]
    pts = np.einsum("qk,tkd->tqd", bary, p)
    return pts, mesh.areas[:, None] * w[None, :]


def boundary_points(mesh: Mesh, rule=GAUSS4):
    """Gauss points (nB, q, 2), local coordinates (q,), weights (nB, q) including |E|."""
    s, w = rule
    a = mesh.vertices[mesh.boundary[:, 0]]
    b = mesh.vertices[mesh.boundary[:, 1]]
    pts = a[:, None, :] + s[None, :, None] * (b - a)[:, None, :]
    return pts, s, mesh.boundary_lengths[:, None] * w[None, :]


def gradients_per_triangle(mesh: Mesh, U) -> np.ndarray:
    """Constant gradient (nT, 2) of the P1 function with nodal values U."""
    U = np.asarray(U, dtype=float)
    return np.einsum("tk,tkd->td", U[mesh.triangles], mesh.gradients)


def apply_nonlinear_form(mesh: Mesh, model: CoefficientModel, U) -> np.ndarray:
    """Vector of ``<A grad U, grad eta_i>`` over all nodal basis functions."""
    flux = model.apply(gradients_per_triangle(mesh, U))
    local = mesh.areas[:, None] * np.einsum("td,tkd->tk", flux, mesh.gradients)
    return np.bincount(mesh.triangles.ravel(), weights=local.ravel(), minlength=mesh.n_vertices)


def _assemble_tensor(mesh: Mesh, J: np.ndarray) -> sp.csr_matrix:
    G = mesh.gradients
    local = mesh.areas[:, None, None] * np.einsum("tid,tde,tje->tij", G, J, G)
    rows = np.repeat(mesh.triangles, 3, axis=1).ravel()
    cols = np.tile(mesh.triangles, (1, 3)).ravel()
    n = mesh.n_vertices
    return sp.csr_matrix((local.ravel(), (rows, cols)), shape=(n, n))


def assemble_linearized_stiffness(mesh: Mesh, model: CoefficientModel, U) -> sp.csr_matrix:
    """Matrix of ``<J_A(grad U) grad eta_j, grad eta_i>``."""
    return _assemble_tensor(mesh, model.jacobian(gradients_per_triangle(mesh, U)))


def assemble_stiffness(mesh: Mesh, scale: float = 1.0) -> sp.csr_matrix:
    """Classical P1 Laplace stiffness matrix times ``scale``."""
    J = np.broadcast_to(scale * np.eye(2), (mesh.n_triangles, 2, 2))
    return _assemble_tensor(mesh, J)


def assemble_mass(mesh: Mesh) -> sp.csr_matrix:
    local_ref = (np.ones((3, 3)) + np.eye(3)) / 12.0
    local = mesh.areas[:, None, None] * local_ref[None]
    rows = np.repeat(mesh.triangles, 3, axis=1).ravel()
    cols = np.tile(mesh.triangles, (1, 3)).ravel()
    n = mesh.n_vertices
    return sp.csr_matrix((local.ravel(), (rows, cols)), shape=(n, n))


def assemble_load(mesh: Mesh, data: VolumeData) -> np.ndarray:
    """Entries ``int_Omega f eta_i + int_Gamma phi0 eta_i``."""
    b = np.zeros(mesh.n_vertices)
    if data.f is not None:
        pts, w = triangle_points(mesh)
        fv = np.asarray(data.f(pts), dtype=float)
        bary = TRI_RULE[0]
        local = np.einsum("tq,qk->tk", w * fv, bary)
        b += np.bincount(mesh.triangles.ravel(), weights=local.ravel(), minlength=mesh.n_vertices)
    if data.phi0 is not None:
        pts, s, w = boundary_points(mesh)
        nrm = np.broadcast_to(mesh.boundary_normals[:, None, :], pts.shape)
        gv = np.asarray(data.phi0(pts, nrm), dtype=float) * w
        b += np.bincount(mesh.boundary[:, 0], weights=gv @ (1.0 - s), minlength=mesh.n_vertices)
        b += np.bincount(mesh.boundary[:, 1], weights=gv @ s, minlength=mesh.n_vertices)
    return b


def _guarded_points(mesh: Mesh, fn: Callable, rule=TRI_RULE):
    """Evaluate ``fn`` at quadrature points, nudging points where it is not finite."""
    pts, w = triangle_points(mesh, rule)
    vals = np.asarray(fn(pts), dtype=float)
    bad = ~np.all(np.isfinite(vals.reshape(vals.shape[0], vals.shape[1], -1)), axis=-1)
    if np.any(bad):
        t, q = np.nonzero(bad)
        centroid = mesh.vertices[mesh.triangles[t]].mean(axis=1)
        h = np.sqrt(mesh.areas[t])
        d = centroid - pts[t, q]
        d /= np.maximum(np.linalg.norm(d, axis=1), 1e-300)[:, None]
        moved = pts[t, q] + 1e-12 * h[:, None] * d
        vals[t, q] = fn(moved)
    return vals, w


def _duffy_rule(n_levels: int = 24, ratio: float = 0.2, order: int = 8):
    """Points (u, v) and weights on the unit square for a vertex-singular Duffy map.

    The radial variable ``u`` is split geometrically toward 0.
    """
    g, w = np.polynomial.legendre.leggauss(order)
    g, w = 0.5 * (g + 1.0), 0.5 * w
    edges = np.concatenate([ratio ** np.arange(n_levels + 1), [0.0]])
    a, b = edges[1:], edges[:-1]
    u = (a[:, None] + (b - a)[:, None] * g[None, :]).ravel()
    wu = ((b - a)[:, None] * w[None, :]).ravel()
    U, Vv = np.meshgrid(u, g, indexing="ij")
    W = np.outer(wu, w)
    return U.ravel(), Vv.ravel(), W.ravel()


_DUFFY = _duffy_rule()


def _composite_tri_rule(depth: int = 4, rule=TRI_RULE):
    """``rule`` applied on the 4**depth sons of uniform red refinement."""
    tris = [np.eye(3)]
    for _ in range(depth):
        nxt = []
        for t in tris:
            m01, m12, m20 = (t[0] + t[1]) / 2, (t[1] + t[2]) / 2, (t[2] + t[0]) / 2
            nxt += [np.array(x) for x in ((t[0], m01, m20), (m01, t[1], m12), (m20, m12, t[2]), (m12, m20, m01))]
        tris = nxt
    bary, w = rule
    pts = np.concatenate([bary @ t for t in tris])
    return pts, np.tile(w, len(tris)) / len(tris)


_NEAR_TRI = _composite_tri_rule()
_NEAR_FACTOR = 4.0


def _graded_line_rule():
    g, w = np.polynomial.legendre.leggauss(16)
    g, w = 0.5 * (g + 1.0), 0.5 * w
    edges = np.concatenate([0.1 ** np.arange(40), [0.0]])
    a, b = edges[1:], edges[:-1]
    return (a[:, None] + (b - a)[:, None] * g).ravel(), ((b - a)[:, None] * w).ravel()


_GRADED_LINE = _graded_line_rule()
_NEAR_LINE = (
    ((np.arange(16)[:, None] + GAUSS4[0][None, :]) / 16.0).ravel(),
    np.tile(GAUSS4[1], 16) / 16.0,
)


def singular_triangles(mesh: Mesh, point) -> tuple[np.ndarray, np.ndarray]:
    """Triangles with a vertex at ``point`` and the local index of that vertex."""
    p = np.asarray(point, dtype=float)
    hit = np.linalg.norm(mesh.vertices - p, axis=1) <= 1e-13 * max(1.0, np.abs(p).max())
    loc = hit[mesh.triangles]
    t = np.nonzero(loc.any(axis=1))[0]
    return t, np.argmax(loc[t], axis=1)


def _points_in(mesh: Mesh, t: np.ndarray, bary: np.ndarray) -> np.ndarray:
    return np.einsum("qk,tkd->tqd", bary, mesh.vertices[mesh.triangles[t]])


def integrate_per_triangle(mesh: Mesh, fn: Callable, singular_points=()) -> np.ndarray:
    """Integral of ``fn(points, tri)`` over each triangle.

    ``fn`` receives points (n, q, 2) and the triangle indices (n,). Triangles
    touching one of ``singular_points`` get a graded Duffy rule, triangles
    near one a composite 7-point rule, all others the plain 7-point rule.
    """
    nT = mesh.n_triangles
    out = np.full(nT, np.nan)
    u, v, wd = _DUFFY
    done = np.zeros(nT, dtype=bool)
    for sp_pt in singular_points:
        t, k = singular_triangles(mesh, sp_pt)
        t, k = t[~done[t]], k[~done[t]]
        if t.size:
            idx = mesh.triangles[t]
            r = np.arange(t.size)
            P0 = mesh.vertices[idx[r, k]]
            P1 = mesh.vertices[idx[r, (k + 1) % 3]]
            P2 = mesh.vertices[idx[r, (k + 2) % 3]]
            x = (P0[:, None, :] + u[None, :, None] * (P1 - P0)[:, None, :]
                 + (u * v)[None, :, None] * (P2 - P1)[:, None, :])
            fv = np.asarray(fn(x, t), dtype=float)
            out[t] = np.sum((2.0 * mesh.areas[t])[:, None] * fv * (u * wd)[None, :], axis=1)
            done[t] = True
        dist = np.linalg.norm(mesh.vertices[mesh.triangles].mean(axis=1) - np.asarray(sp_pt, dtype=float), axis=1)
        near = np.nonzero((dist < _NEAR_FACTOR * mesh.diameters) & ~done)[0]
        if near.size:
            bary, w = _NEAR_TRI
            fv = np.asarray(fn(_points_in(mesh, near, bary), near), dtype=float)
            out[near] = mesh.areas[near] * (fv @ w)
            done[near] = True
    rest = np.nonzero(~done)[0]
    if rest.size:
        bary, w = TRI_RULE
        vals = np.asarray(fn(_points_in(mesh, rest, bary), rest), dtype=float)
        out[rest] = mesh.areas[rest] * (vals @ w)
    return out


def integrate_per_boundary_edge(mesh: Mesh, fn: Callable, singular_points=(), panels: int = 1) -> np.ndarray:
    """Integral of ``fn(points, edges)`` over each boundary edge.

    Edges ending at one of ``singular_points`` use a geometrically graded
    Gauss rule, nearby edges a 16-panel composite rule, all others 4-point
    Gauss on each of ``panels`` equal pieces.
    """
    nB = mesh.n_boundary_edges
    out = np.full(nB, np.nan)
    done = np.zeros(nB, dtype=bool)
    A = mesh.vertices[mesh.boundary[:, 0]]
    B = mesh.vertices[mesh.boundary[:, 1]]
    L = mesh.boundary_lengths

    def apply_rule(e, start, end, s, w):
        x = start[:, None, :] + s[None, :, None] * (end - start)[:, None, :]
        out[e] = L[e] * (np.asarray(fn(x, e), dtype=float) @ w)
        done[e] = True

    for sp_pt in singular_points:
        p = np.asarray(sp_pt, dtype=float)
        tol = 1e-13 * max(1.0, np.abs(p).max())
        for start, end in ((A, B), (B, A)):
            e = np.nonzero((np.linalg.norm(start - p, axis=1) <= tol) & ~done)[0]
            if e.size:
                apply_rule(e, start[e], end[e], *_GRADED_LINE)
        dist = np.linalg.norm(0.5 * (A + B) - p, axis=1)
        e = np.nonzero((dist < _NEAR_FACTOR * L) & ~done)[0]
        if e.size:
            apply_rule(e, A[e], B[e], *_NEAR_LINE)
    rest = np.nonzero(~done)[0]
    if rest.size:
        s4, w4 = GAUSS4
        s_rest = ((np.arange(panels)[:, None] + s4[None, :]) / panels).ravel()
        apply_rule(rest, A[rest], B[rest], s_rest, np.tile(w4, panels) / panels)
    return out


def h1_seminorm_error(mesh: Mesh, U, grad_exact: Callable, singular_points=()) -> float:
    """``||grad(u - U)||_{L2}``; see :func:`integrate_per_triangle` for the quadrature."""
    gU = gradients_per_triangle(mesh, U)

    def integrand(x, t):
        d = grad_exact(x) - gU[t][:, None, :]
        return np.sum(d**2, axis=-1)

    return float(np.sqrt(np.sum(integrate_per_triangle(mesh, integrand, singular_points))))


def _p1_at(mesh: Mesh, U, x, t):
    """Evaluate the P1 function at points x (n, q, 2) inside triangles t."""
    Ut = np.asarray(U, dtype=float)[mesh.triangles[t]]
    grad = np.einsum("tk,tkd->td", Ut, mesh.gradients[t])
    p0 = mesh.vertices[mesh.triangles[t, 0]]
    return Ut[:, 0, None] + np.einsum("tqd,td->tq", x - p0[:, None, :], grad)


def l2_error(mesh: Mesh, U, u_exact: Callable, singular_points=()) -> float:
    def integrand(x, t):
        return (u_exact(x) - _p1_at(mesh, U, x, t)) ** 2

    return float(np.sqrt(np.sum(integrate_per_triangle(mesh, integrand, singular_points))))


def h1_error(mesh: Mesh, U, u_exact: Callable, grad_exact: Callable, singular_points=()) -> float:
    """Full ``||u - U||_{H1}``."""
    return float(np.hypot(h1_seminorm_error(mesh, U, grad_exact, singular_points),
                          l2_error(mesh, U, u_exact, singular_points)))

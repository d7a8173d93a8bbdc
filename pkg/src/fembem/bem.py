"""
Galerkin boundary element matrices and pointwise potentials for the 2D
Laplacian on polygonal boundaries.

Fundamental solution ``G(z) = -log|z| / (2 pi)``. Trial spaces are P0 on
boundary panels and continuous P1 on boundary nodes. Sign conventions::

    V phi(x)  = int G(x - y) phi(y) ds_y
    K u(x)    = int (x - y).nu(y) / (2 pi |x - y|^2) u(y) ds_y
    K' phi(x) = -int (x - y).nu(x) / (2 pi |x - y|^2) phi(y) ds_y
    W u       = -(V u')'

so that ``(1/2 + K) 1 = 0`` on a closed polygon. Near-field panel pairs
are integrated in closed form; well separated pairs use tensor Gauss
quadrature, where the integrand is analytic and the closed forms would
suffer from cancellation.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.special import xlogy

from .mesh import Mesh

__all__ = [
    "Panels",
    "OperatorSet",
    "assemble_operators",
    "eval_V",
    "eval_V_arcderiv",
    "eval_K",
    "eval_K_arcderiv",
    "eval_Kadj",
    "eval_W",
    "arclength_derivative",
    "dump_operators",
    "load_matrix",
]

TWO_PI = 2.0 * np.pi
_FAR_RATIO = 2.0
_GAUSS_FAR = 8


def _cross(a, b):
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


def _dot(a, b):
    return a[..., 0] * b[..., 0] + a[..., 1] * b[..., 1]


# --------------------------------------------------------------- panels

@dataclass(frozen=True, eq=False)
class Panels:
    """Closed polygonal boundary mesh.

    ``nodes`` are the boundary points, ``conn[e] = (start, end)`` indexes
    them, oriented so that the interior is on the left.
    """

    nodes: np.ndarray
    conn: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "nodes", np.asarray(self.nodes, dtype=float))
        object.__setattr__(self, "conn", np.asarray(self.conn, dtype=np.int64))
        if np.any(self.lengths <= 0.0):
            raise ValueError("degenerate boundary panel of zero length")

    @classmethod
    def from_mesh(cls, mesh: Mesh) -> "Panels":
        return cls(mesh.vertices[mesh.boundary_nodes], mesh.boundary_local)

    @classmethod
    def from_polygon(cls, points) -> "Panels":
        points = np.asarray(points, dtype=float)
        n = len(points)
        return cls(points, np.stack([np.arange(n), (np.arange(n) + 1) % n], axis=1))

    @property
    def n_panels(self) -> int:
        return len(self.conn)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @cached_property
    def starts(self):
        return self.nodes[self.conn[:, 0]]

    @cached_property
    def ends(self):
        return self.nodes[self.conn[:, 1]]

    @cached_property
    def lengths(self):
        d = self.nodes[self.conn[:, 1]] - self.nodes[self.conn[:, 0]]
        return np.hypot(d[:, 0], d[:, 1])

    @cached_property
    def tangents(self):
        return (self.ends - self.starts) / self.lengths[:, None]

    @cached_property
    def normals(self):
        t = self.tangents
        return np.stack([t[:, 1], -t[:, 0]], axis=1)

    def points(self, panel, s) -> np.ndarray:
        """Points at local coordinate ``s`` in [0, 1] on the given panels."""
        s = np.asarray(s, dtype=float)
        return self.starts[panel] + s[..., None] * (self.ends[panel] - self.starts[panel])

    @cached_property
    def derivative_matrix(self) -> np.ndarray:
        """(nE, nB) map from nodal P1 values to P0 arclength derivatives."""
        D = np.zeros((self.n_panels, self.n_nodes))
        idx = np.arange(self.n_panels)
        D[idx, self.conn[:, 1]] += 1.0 / self.lengths
        D[idx, self.conn[:, 0]] -= 1.0 / self.lengths
        return D

    @cached_property
    def mass_matrix(self) -> np.ndarray:
        """(nE, nB) P0-P1 mass matrix ``<chi_j, eta_k>``."""
        M = np.zeros((self.n_panels, self.n_nodes))
        idx = np.arange(self.n_panels)
        M[idx, self.conn[:, 0]] += 0.5 * self.lengths
        M[idx, self.conn[:, 1]] += 0.5 * self.lengths
        return M


def arclength_derivative(panels: Panels, u_nodal) -> np.ndarray:
    """P0 arclength derivative of a P1 boundary function."""
    u = np.asarray(u_nodal, dtype=float)
    return (u[panels.conn[:, 1]] - u[panels.conn[:, 0]]) / panels.lengths


# ---------------------------------------------------- closed-form pieces

def _L1(x, h):
    """Antiderivative of log sqrt(x^2 + h^2) in x."""
    ah = np.abs(h)
    return 0.5 * xlogy(x, x * x + h * h) - x + ah * np.arctan2(x, ah)


def _Q(x, h):
    """Antiderivative of x log sqrt(x^2 + h^2) in x."""
    r2 = x * x + h * h
    return 0.25 * (xlogy(r2, r2) - x * x)


def _L2(x, d):
    """Second antiderivative of log sqrt(x^2 + d^2)."""
    ad = np.abs(d)
    return 0.25 * xlogy(x * x - d * d, x * x + d * d) - 0.75 * x * x + ad * x * np.arctan2(x, ad)


def _pattern(f, a1, a2, b1, b2, *args):
    return f(a2 - b1, *args) - f(a1 - b1, *args) - f(a2 - b2, *args) + f(a1 - b2, *args)


def _edge_moments(c0, c1):
    """Integrals of log|r| and r log|r| along the segment c0 -> c1.

    Returns the segment length, unit tangent, right-hand normal, signed
    distance of the segment line from the origin, E0 = int log|r| ds and
    E1 = int sigma log|r| ds with sigma the arclength from c0.
    """
    d = c1 - c0
    L = np.hypot(d[..., 0], d[..., 1])
    tau = d / L[..., None]
    n = np.stack([tau[..., 1], -tau[..., 0]], axis=-1)
    pp = -_dot(c0, tau)
    h = _dot(c0, n)
    E0 = _L1(L - pp, h) - _L1(-pp, h)
    E1 = _Q(L - pp, h) - _Q(-pp, h) + pp * E0
    return L, tau, n, h, E0, E1


def _pairs_general(A0, A1, B0, B1):
    """Closed-form V and K entries for non-parallel panel pairs."""
    p = A1 - A0
    q = B1 - B0
    z = A0 - B0
    pxq = _cross(p, q)
    lp = np.hypot(p[:, 0], p[:, 1])
    lq = np.hypot(q[:, 0], q[:, 1])
    nu = np.stack([q[:, 1], -q[:, 0]], axis=1) / lq[:, None]
    corners = [z, z + p, z + p - q, z - q]
    AL = np.zeros(len(p))
    I1 = np.zeros(len(p))
    T = np.zeros((len(p), 2, 2))
    for k in range(4):
        c0, c1 = corners[k], corners[(k + 1) % 4]
        L, tau, n, h, E0, E1 = _edge_moments(c0, c1)
        AL += h * (0.5 * E0 - 0.25 * L)
        I1 += _dot(nu, n) * E0
        mom = c0 * E0[:, None] + tau * E1[:, None]
        T += mom[:, :, None] * n[:, None, :]
    # the corner list runs clockwise when p x q > 0
    orient = -np.sign(pxq)
    AL *= orient
    I1 *= orient
    T *= orient[:, None, None]
    T[:, 0, 0] -= AL
    T[:, 1, 1] -= AL
    jac = lp * lq / np.abs(pxq)
    qxp = -pxq
    t0 = _cross(z, p) / qxp
    c = np.stack([-p[:, 1], p[:, 0]], axis=1) / qxp[:, None]
    nTc = np.einsum("ni,nij,nj->n", nu, T, c)
    V = -jac * AL / TWO_PI
    K0 = jac * ((1.0 - t0) * I1 - nTc) / TWO_PI
    K1 = jac * (t0 * I1 + nTc) / TWO_PI
    return V, K0, K1


def _atan(u, d):
    # arctan(u/d) for d != 0 of either sign
    return np.arctan(u / d)


def _pairs_parallel(A0, A1, B0, B1):
    """Closed-form V and K entries for parallel (including identical) panels."""
    p = A1 - A0
    lp = np.hypot(p[:, 0], p[:, 1])
    e = p / lp[:, None]
    nA = np.stack([e[:, 1], -e[:, 0]], axis=1)
    a1 = _dot(A0, e)
    a2 = _dot(A1, e)
    sb0 = _dot(B0, e)
    sb1 = _dot(B1, e)
    b1 = np.minimum(sb0, sb1)
    b2 = np.maximum(sb0, sb1)
    d = _dot(A0 - B0, nA)
    V = -_pattern(_L2, a1, a2, b1, b2, d) / TWO_PI

    q = B1 - B0
    lq = np.hypot(q[:, 0], q[:, 1])
    nuB = np.stack([q[:, 1], -q[:, 0]], axis=1) / lq[:, None]
    delta = _dot(A0 - B0, nuB)
    K0 = np.zeros_like(V)
    K1 = np.zeros_like(V)
    off = np.abs(delta) > 1e-13 * np.maximum(lp, lq)
    if np.any(off):
        a1, a2, b1, b2, dl = a1[off], a2[off], b1[off], b2[off], delta[off]

        def aa(u):
            return u * _atan(u, dl) - 0.5 * dl * np.log(u * u + dl * dl)

        def bb(u):
            return 0.5 * (u * u + dl * dl) * _atan(u, dl) - 0.5 * dl * u

        def g2(u):
            ad = np.abs(dl)
            return 0.5 * dl * (u * np.log(u * u + dl * dl) - 2.0 * u + 2.0 * ad * np.arctan(u / ad))

        I0 = aa(a2 - b1) - aa(a1 - b1) - aa(a2 - b2) + aa(a1 - b2)
        S1 = (bb(a2 - b1) + b1 * aa(a2 - b1) - bb(a1 - b1) - b1 * aa(a1 - b1)) - (
            bb(a2 - b2) + b2 * aa(a2 - b2) - bb(a1 - b2) - b2 * aa(a1 - b2)
        )
        G = g2(a2 - b1) - g2(a1 - b1) - g2(a2 - b2) + g2(a1 - b2)
        Isig = S1 - G
        s0, s1 = sb0[off], sb1[off]
        dd = s1 - s0
        K0[off] = (s1 * I0 - Isig) / dd / TWO_PI
        K1[off] = (-s0 * I0 + Isig) / dd / TWO_PI
    return V, K0, K1


def _pairs_far(A0, A1, B0, B1, n=_GAUSS_FAR):
    """Tensor Gauss-Legendre entries for well separated pairs."""
    g, w = np.polynomial.legendre.leggauss(n)
    s = 0.5 * (g + 1.0)
    w = 0.5 * w
    lA = np.hypot(*(A1 - A0).T)
    lB = np.hypot(*(B1 - B0).T)
    x = A0[:, None, :] + s[None, :, None] * (A1 - A0)[:, None, :]
    y = B0[:, None, :] + s[None, :, None] * (B1 - B0)[:, None, :]
    r = x[:, :, None, :] - y[:, None, :, :]
    r2 = r[..., 0] ** 2 + r[..., 1] ** 2
    ww = w[:, None] * w[None, :]
    V = -(lA * lB) * np.einsum("ij,nij->n", ww, 0.5 * np.log(r2)) / TWO_PI
    q = B1 - B0
    nuB = np.stack([q[:, 1], -q[:, 0]], axis=1) / lB[:, None]
    kern = _dot(r, nuB[:, None, None, :]) / r2
    K1 = (lA * lB) * np.einsum("ij,j,nij->n", ww, s, kern) / TWO_PI
    K0 = (lA * lB) * np.einsum("ij,j,nij->n", ww, 1.0 - s, kern) / TWO_PI
    return V, K0, K1


def _segment_distance(A0, A1, B0, B1):
    def pt_seg(P, S0, S1):
        d = S1 - S0
        t = np.clip(_dot(P - S0, d) / _dot(d, d), 0.0, 1.0)
        r = P - (S0 + t[:, None] * d)
        return np.hypot(r[:, 0], r[:, 1])

    return np.minimum.reduce([pt_seg(A0, B0, B1), pt_seg(A1, B0, B1), pt_seg(B0, A0, A1), pt_seg(B1, A0, A1)])


def panel_pair_integrals(A0, A1, B0, B1, far_ratio: float = _FAR_RATIO):
    """V entries and the two K hat entries for arrays of panel pairs.

    Returns ``(V, K0, K1)`` where ``V = <chi_A, V chi_B>`` and ``Kk`` is
    ``<chi_A, K eta>`` with ``eta`` the hat of endpoint k of panel B
    restricted to B.
    """
    A0, A1, B0, B1 = (np.atleast_2d(np.asarray(a, dtype=float)) for a in (A0, A1, B0, B1))
    n = len(A0)
    V = np.empty(n)
    K0 = np.empty(n)
    K1 = np.empty(n)
    lA = np.hypot(*(A1 - A0).T)
    lB = np.hypot(*(B1 - B0).T)
    dist = _segment_distance(A0, A1, B0, B1)
    far = dist >= far_ratio * np.maximum(lA, lB)
    par = np.abs(_cross(A1 - A0, B1 - B0)) <= 1e-10 * lA * lB
    for mask, fn in ((far, _pairs_far), (~far & par, _pairs_parallel), (~far & ~par, _pairs_general)):
        if np.any(mask):
            # chunk to bound memory of the far-field tensor quadrature
            idx = np.flatnonzero(mask)
            for start in range(0, len(idx), 20000):
                j = idx[start:start + 20000]
                V[j], K0[j], K1[j] = fn(A0[j], A1[j], B0[j], B1[j])
    return V, K0, K1


# ----------------------------------------------------------- operators

@dataclass(frozen=True, eq=False)
class OperatorSet:
    """Galerkin matrices on one boundary mesh.

    V : (nE, nE), K : (nE, nB), M : (nE, nB), W : (nB, nB). Columns of
    K, M, W index ``panels.nodes`` (boundary nodes in ``mesh.boundary_nodes``
    order when built from a mesh).
    """

    panels: Panels
    V: np.ndarray
    K: np.ndarray
    M: np.ndarray
    W: np.ndarray

    @property
    def D(self) -> np.ndarray:
        return self.panels.derivative_matrix

    def energy_norm_V(self, psi) -> float:
        psi = np.asarray(psi, dtype=float)
        return float(np.sqrt(max(psi @ self.V @ psi, 0.0)))


def assemble_operators(mesh_or_panels) -> OperatorSet:
    """Assemble V, K, M, W for a mesh (or a bare ``Panels`` object)."""
    panels = mesh_or_panels if isinstance(mesh_or_panels, Panels) else Panels.from_mesh(mesh_or_panels)
    nE, nB = panels.n_panels, panels.n_nodes
    ia, ib = np.meshgrid(np.arange(nE), np.arange(nE), indexing="ij")
    ia, ib = ia.ravel(), ib.ravel()
    # only the upper triangle is needed for V; K needs all pairs
    Vf, K0, K1 = panel_pair_integrals(panels.starts[ia], panels.ends[ia], panels.starts[ib], panels.ends[ib])
    V = Vf.reshape(nE, nE)
    V = 0.5 * (V + V.T)
    K = np.zeros((nE, nB))
    np.add.at(K, (ia, panels.conn[ib, 0]), K0)
    np.add.at(K, (ia, panels.conn[ib, 1]), K1)
    D = panels.derivative_matrix
    W = D.T @ V @ D
    W = 0.5 * (W + W.T)
    return OperatorSet(panels, V, K, panels.mass_matrix, W)


# ------------------------------------------------------------ pointwise

def locate(panels: Panels, x, tol: float = 1e-10):
    """Panel index and local coordinate of points on the boundary."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    d = panels.ends - panels.starts
    rel = x[:, None, :] - panels.starts[None, :, :]
    t = _dot(rel, d[None]) / _dot(d, d)[None]
    tc = np.clip(t, 0.0, 1.0)
    foot = panels.starts[None] + tc[..., None] * d[None]
    dist = np.hypot(*(x[:, None, :] - foot).transpose(2, 0, 1))
    panel = np.argmin(dist, axis=1)
    if np.any(dist[np.arange(len(x)), panel] > tol * max(1.0, panels.lengths.max())):
        raise ValueError("evaluation point is not on the boundary")
    return panel, t[np.arange(len(x)), panel]


def _prep_points(panels: Panels, x, panel):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if panel is None:
        panel, t = locate(panels, x)
    else:
        panel = np.asarray(panel, dtype=np.int64)
        d = panels.ends[panel] - panels.starts[panel]
        t = _dot(x - panels.starts[panel], d) / _dot(d, d)
    L = panels.lengths[panel]
    if np.any(np.minimum(t, 1.0 - t) * L <= 1e-14 * np.maximum(L, 1.0)):
        raise ValueError("evaluation point coincides with a panel endpoint")
    return x, panel


def _local(panels: Panels, x):
    """Per (point, panel) local coordinates: x1, x2, h, theta, half log ratio, E0."""
    B0 = panels.starts[None]
    tau = panels.tangents[None]
    nu = panels.normals[None]
    L = panels.lengths[None]
    rel = x[:, None, :] - B0
    pp = _dot(rel, tau)
    h = _dot(rel, nu)
    x1 = -pp
    x2 = L - pp
    r1 = x1 * x1 + h * h
    h2 = h * h
    theta = np.arctan2((x2 - x1) * h, h2 + x1 * x2)
    tiny = np.abs(h) <= 1e-14 * L
    theta = np.where(tiny, 0.0, theta)
    r2 = x2 * x2 + h2
    ratio = (x2 - x1) * (x2 + x1) / r1
    # log1p keeps far panels accurate; the direct difference handles r2 << r1
    with np.errstate(divide="ignore", invalid="ignore"):
        half_log = np.where(np.abs(ratio) < 0.5, 0.5 * np.log1p(ratio), 0.5 * (np.log(r2) - np.log(r1)))
    ah = np.abs(h)
    theta_abs = np.where(tiny, 0.0, np.arctan2((x2 - x1) * ah, h2 + x1 * x2))
    E0 = 0.5 * (L * np.log(r1)) + x2 * half_log - L + ah * theta_abs
    return dict(pp=pp, h=h, x1=x1, x2=x2, theta=theta, half_log=half_log, E0=E0, r1=r1)


def _chunks(panels: Panels, n_points: int):
    size = max(1, int(4e6 // max(panels.n_panels, 1)))
    for start in range(0, n_points, size):
        yield slice(start, min(start + size, n_points))


def eval_V(panels: Panels, phi, x, panel=None) -> np.ndarray:
    """Single-layer potential of a P0 density at boundary points."""
    x, panel = _prep_points(panels, x, panel)
    phi = np.asarray(phi, dtype=float)
    out = np.empty(len(x))
    for sl in _chunks(panels, len(x)):
        loc = _local(panels, x[sl])
        out[sl] = -(loc["E0"] @ phi) / TWO_PI
    return out


def _tangent_and_normal(panels, panel):
    return panels.tangents[panel], panels.normals[panel]


def eval_V_arcderiv(panels: Panels, phi, x, panel=None) -> np.ndarray:
    """Arclength derivative of the single-layer potential."""
    x, panel = _prep_points(panels, x, panel)
    tx, _ = _tangent_and_normal(panels, panel)
    phi = np.asarray(phi, dtype=float)
    out = np.empty(len(x))
    for sl in _chunks(panels, len(x)):
        loc = _local(panels, x[sl])
        ct = tx[sl] @ panels.tangents.T
        cn = tx[sl] @ panels.normals.T
        val = -ct * loc["half_log"] + cn * loc["theta"]
        out[sl] = -(val @ phi) / TWO_PI
    return out


def eval_Kadj(panels: Panels, phi, x, panel=None) -> np.ndarray:
    """Adjoint double-layer operator applied to a P0 density."""
    x, panel = _prep_points(panels, x, panel)
    _, nx = _tangent_and_normal(panels, panel)
    phi = np.asarray(phi, dtype=float)
    out = np.empty(len(x))
    for sl in _chunks(panels, len(x)):
        loc = _local(panels, x[sl])
        ct = nx[sl] @ panels.tangents.T
        cn = nx[sl] @ panels.normals.T
        val = -ct * loc["half_log"] + cn * loc["theta"]
        out[sl] = -(val @ phi) / TWO_PI
    return out


def _hat_coeffs(panels: Panels, u):
    u = np.asarray(u, dtype=float)
    a = u[panels.conn[:, 0]]
    b = (u[panels.conn[:, 1]] - a) / panels.lengths
    return a, b


def eval_K(panels: Panels, u_nodal, x, panel=None) -> np.ndarray:
    """Double-layer operator applied to a P1 boundary function."""
    x, panel = _prep_points(panels, x, panel)
    a, b = _hat_coeffs(panels, u_nodal)
    out = np.empty(len(x))
    for sl in _chunks(panels, len(x)):
        loc = _local(panels, x[sl])
        F = (a + b * loc["pp"]) * loc["theta"] + b * loc["h"] * loc["half_log"]
        out[sl] = F.sum(axis=1) / TWO_PI
    return out


def eval_K_arcderiv(panels: Panels, u_nodal, x, panel=None) -> np.ndarray:
    """Arclength derivative of the double-layer operator applied to a P1 function."""
    x, panel = _prep_points(panels, x, panel)
    tx, _ = _tangent_and_normal(panels, panel)
    a, b = _hat_coeffs(panels, u_nodal)
    out = np.empty(len(x))
    for sl in _chunks(panels, len(x)):
        loc = _local(panels, x[sl])
        h, x1, x2 = loc["h"], loc["x1"], loc["x2"]
        r2 = x2 * x2 + h * h
        r1 = loc["r1"]
        w = a + b * loc["pp"]
        dh = h / r2 - h / r1
        dX = x2 / r2 - x1 / r1
        F_pp = b * loc["theta"] - w * dh - b * h * dX
        F_h = -w * dX + b * (loc["half_log"] + h * dh)
        ct = tx[sl] @ panels.tangents.T
        cn = tx[sl] @ panels.normals.T
        out[sl] = (F_pp * ct + F_h * cn).sum(axis=1) / TWO_PI
    return out


def eval_W(panels: Panels, u_nodal, x, panel=None) -> np.ndarray:
    """Hypersingular operator applied to a P1 function, ``-(V u')'``."""
    return -eval_V_arcderiv(panels, arclength_derivative(panels, u_nodal), x, panel)


# ----------------------------------------------------------------- dump

_MAGIC = b"FEMBEMOP"


def dump_operators(ops: OperatorSet, prefix) -> list[str]:
    """Write each matrix as ``<prefix>_<name>.bin``; returns the paths."""
    paths = []
    for name in ("V", "K", "M", "W"):
        mat = np.ascontiguousarray(getattr(ops, name), dtype="<f8")
        path = f"{prefix}_{name}.bin"
        with open(path, "wb") as fh:
            fh.write(struct.pack("<8sII", _MAGIC, *mat.shape))
            fh.write(mat.tobytes())
        paths.append(path)
    return paths


def load_matrix(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic, rows, cols = struct.unpack("<8sII", fh.read(16))
        if magic != _MAGIC:
            raise ValueError("not an operator dump")
        data = np.frombuffer(fh.read(), dtype="<f8")
    return data.reshape(rows, cols).copy()

"""
Conforming triangulations of polygonal domains and newest vertex bisection.

Triangles are stored counter-clockwise with the refinement edge always in
local position 0, i.e. the edge ``(v0, v1)``; ``v2`` is the newest vertex.
Boundary edges are stored as vertex pairs oriented so that the domain lies
to the left, which makes ``(t_y, -t_x)`` the outward normal.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable

import numpy as np

__all__ = [
    "Mesh",
    "MarkSet",
    "build_initial",
    "refine_nvb",
    "refine_uniform",
    "refine_red",
    "prolongate",
    "prolongate_boundary",
    "mesh_size",
    "shape_regularity",
    "dump_mesh",
    "load_mesh",
    "DOMAINS",
]


def _signed_areas(vertices, triangles):
    p0 = vertices[triangles[:, 0]]
    p1 = vertices[triangles[:, 1]]
    p2 = vertices[triangles[:, 2]]
    d1 = p1 - p0
    d2 = p2 - p0
    return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


@dataclass(frozen=True, eq=False)
class Mesh:
    """Triangulation plus its boundary trace mesh.

    Attributes
    ----------
    vertices : (nV, 2) float array
    triangles : (nT, 3) int array, counter-clockwise, refinement edge ``(v0, v1)``
    boundary : (nB, 2) int array, oriented with the domain on the left
    generation : (nT,) int array, number of bisections since the initial mesh
    level : refinement counter
    vertex_parents : (nV, 2) int array or None. Vertex ``i`` of this mesh is
        the midpoint of the parent-mesh vertices ``vertex_parents[i]``
        (both entries equal for inherited vertices).
    boundary_parent : (nB,) int array or None, father boundary edge index.
    triangle_parent : (nT,) int array or None, father triangle index.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    boundary: np.ndarray
    generation: np.ndarray = None
    level: int = 0
    vertex_parents: np.ndarray | None = None
    boundary_parent: np.ndarray | None = None
    triangle_parent: np.ndarray | None = None
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "vertices", np.ascontiguousarray(self.vertices, dtype=float))
        object.__setattr__(self, "triangles", np.ascontiguousarray(self.triangles, dtype=np.int64))
        object.__setattr__(self, "boundary", np.ascontiguousarray(self.boundary, dtype=np.int64))
        if self.generation is None:
            object.__setattr__(self, "generation", np.zeros(len(self.triangles), dtype=np.int64))
        if not np.all(np.isfinite(self.vertices)):
            raise ValueError("vertex coordinates must be finite")
        if np.any(self.areas <= 0.0):
            raise ValueError("triangles must be counter-clockwise with positive area")

    # ------------------------------------------------------------------ sizes
    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def n_boundary_edges(self) -> int:
        return len(self.boundary)

    @property
    def refinement_edge(self) -> np.ndarray:
        """Local index of the refinement edge per triangle (always 0 here)."""
        return np.zeros(self.n_triangles, dtype=np.int64)

    # -------------------------------------------------------------- geometry
    @cached_property
    def areas(self) -> np.ndarray:
        return _signed_areas(self.vertices, self.triangles)

    @cached_property
    def gradients(self) -> np.ndarray:
        """(nT, 3, 2) gradients of the barycentric coordinates."""
        p = self.vertices[self.triangles]
        d = np.stack([p[:, 2] - p[:, 1], p[:, 0] - p[:, 2], p[:, 1] - p[:, 0]], axis=1)
        g = np.empty_like(d)
        g[..., 0] = -d[..., 1]
        g[..., 1] = d[..., 0]
        return g / (2.0 * self.areas)[:, None, None]

    @cached_property
    def diameters(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        lens = np.stack(
            [np.linalg.norm(p[:, 1] - p[:, 0], axis=1),
             np.linalg.norm(p[:, 2] - p[:, 1], axis=1),
             np.linalg.norm(p[:, 0] - p[:, 2], axis=1)],
            axis=1,
        )
        return lens.max(axis=1)

    @cached_property
    def boundary_lengths(self) -> np.ndarray:
        d = self.vertices[self.boundary[:, 1]] - self.vertices[self.boundary[:, 0]]
        return np.hypot(d[:, 0], d[:, 1])

    @cached_property
    def boundary_tangents(self) -> np.ndarray:
        d = self.vertices[self.boundary[:, 1]] - self.vertices[self.boundary[:, 0]]
        return d / self.boundary_lengths[:, None]

    @cached_property
    def boundary_normals(self) -> np.ndarray:
        """Outward unit normals of the boundary edges."""
        t = self.boundary_tangents
        return np.stack([t[:, 1], -t[:, 0]], axis=1)

    # -------------------------------------------------------------- topology
    @cached_property
    def _edge_data(self):
        tri = self.triangles
        local = np.stack([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]], axis=1).reshape(-1, 2)
        key = np.sort(local, axis=1)
        edges, inverse = np.unique(key, axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
        element_edges = inverse.reshape(-1, 3)
        counts = np.bincount(inverse, minlength=len(edges))
        if np.any(counts > 2):
            raise ValueError("non-manifold triangulation: an edge has more than two triangles")
        edge_triangles = np.full((len(edges), 2), -1, dtype=np.int64)
        owner = np.repeat(np.arange(len(tri)), 3)
        order = np.argsort(inverse, kind="stable")
        sorted_edges = inverse[order]
        first = np.ones(len(order), dtype=bool)
        first[1:] = sorted_edges[1:] != sorted_edges[:-1]
        edge_triangles[sorted_edges[first], 0] = owner[order[first]]
        edge_triangles[sorted_edges[~first], 1] = owner[order[~first]]
        return edges, element_edges, edge_triangles

    @property
    def edges(self) -> np.ndarray:
        """(nE, 2) all edges with sorted vertex pairs."""
        return self._edge_data[0]

    @property
    def element_edges(self) -> np.ndarray:
        """(nT, 3) global edge ids of local edges (v0v1, v1v2, v2v0)."""
        return self._edge_data[1]

    @property
    def edge_triangles(self) -> np.ndarray:
        """(nE, 2) adjacent triangles, second entry -1 on the boundary."""
        return self._edge_data[2]

    @cached_property
    def interior_edge_ids(self) -> np.ndarray:
        return np.flatnonzero(self.edge_triangles[:, 1] >= 0)

    @property
    def interior_edges(self) -> np.ndarray:
        return self.edges[self.interior_edge_ids]

    @property
    def interior_edge_triangles(self) -> np.ndarray:
        return self.edge_triangles[self.interior_edge_ids]

    @cached_property
    def boundary_edge_ids(self) -> np.ndarray:
        """Global edge id of every boundary edge (same order as ``boundary``)."""
        key = np.sort(self.boundary, axis=1)
        edges = self.edges
        # edges are lexicographically sorted, so search on a combined key
        n = self.n_vertices
        ekey = edges[:, 0] * n + edges[:, 1]
        bkey = key[:, 0] * n + key[:, 1]
        idx = np.searchsorted(ekey, bkey)
        if np.any(idx >= len(edges)) or np.any(ekey[np.minimum(idx, len(edges) - 1)] != bkey):
            raise ValueError("boundary edge is not an edge of the triangulation")
        return idx

    @cached_property
    def boundary_owner(self) -> np.ndarray:
        """Owning triangle of every boundary edge."""
        return self.edge_triangles[self.boundary_edge_ids, 0]

    @cached_property
    def boundary_nodes(self) -> np.ndarray:
        """Sorted global indices of the vertices on the boundary."""
        return np.unique(self.boundary)

    @cached_property
    def boundary_local(self) -> np.ndarray:
        """Boundary edges expressed in positions of ``boundary_nodes``."""
        return np.searchsorted(self.boundary_nodes, self.boundary)

    @property
    def h_max(self) -> float:
        return float(np.sqrt(self.areas.max()))

    def is_conforming(self) -> bool:
        """Every edge has one or two triangles, and single-triangle edges are exactly the boundary."""
        et = self.edge_triangles
        bnd = set(np.flatnonzero(et[:, 1] < 0).tolist())
        try:
            given = set(self.boundary_edge_ids.tolist())
        except ValueError:
            return False
        return bnd == given and len(given) == self.n_boundary_edges


@dataclass
class MarkSet:
    """Entities selected for refinement.

    ``interior_edges`` index ``mesh.interior_edge_ids``; ``boundary_edges``
    index ``mesh.boundary``.
    """

    triangles: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    interior_edges: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    boundary_edges: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __post_init__(self):
        self.triangles = np.unique(np.asarray(self.triangles, dtype=np.int64))
        self.interior_edges = np.unique(np.asarray(self.interior_edges, dtype=np.int64))
        self.boundary_edges = np.unique(np.asarray(self.boundary_edges, dtype=np.int64))

    def __len__(self):
        return len(self.triangles) + len(self.interior_edges) + len(self.boundary_edges)

    def validate(self, mesh: Mesh) -> None:
        for arr, n, what in (
            (self.triangles, mesh.n_triangles, "triangle"),
            (self.interior_edges, len(mesh.interior_edge_ids), "interior edge"),
            (self.boundary_edges, mesh.n_boundary_edges, "boundary edge"),
        ):
            if len(arr) and (arr.min() < 0 or arr.max() >= n):
                raise IndexError(f"{what} mark out of range")

    @classmethod
    def everything(cls, mesh: Mesh) -> "MarkSet":
        return cls(
            np.arange(mesh.n_triangles),
            np.arange(len(mesh.interior_edge_ids)),
            np.arange(mesh.n_boundary_edges),
        )


# ---------------------------------------------------------------- domains

_H = 0.25

# L-shape: (-1/4, 1/4)^2 minus the closed fourth quadrant; three squares
# split into four triangles each through their centre.
_LSHAPE_VERTICES = np.array([
    [-_H, -_H], [0.0, -_H], [-_H, 0.0], [0.0, 0.0], [_H, 0.0],
    [-_H, _H], [0.0, _H], [_H, _H],
    [-_H / 2, -_H / 2], [-_H / 2, _H / 2], [_H / 2, _H / 2],
])
_LSHAPE_SQUARES = [(0, 1, 3, 2, 8), (2, 3, 6, 5, 9), (3, 4, 7, 6, 10)]
_LSHAPE_BOUNDARY = [(0, 1), (1, 3), (3, 4), (4, 7), (7, 6), (6, 5), (5, 2), (2, 0)]

# Z-shape: (-1/4, 1/4)^2 minus conv{(0,0), (0,-1/4), (1/4,-1/4)}; interior
# angle 7*pi/4 at the origin. Three squares plus the remaining half square,
# the latter split at the midpoint of its diagonal.
_ZSHAPE_VERTICES = np.array([
    [-_H, -_H], [0.0, -_H], [-_H, 0.0], [0.0, 0.0], [_H, 0.0],
    [-_H, _H], [0.0, _H], [_H, _H], [_H, -_H], [_H / 2, -_H / 2],
    [-_H / 2, -_H / 2], [-_H / 2, _H / 2], [_H / 2, _H / 2],
])
_ZSHAPE_SQUARES = [(0, 1, 3, 2, 10), (2, 3, 6, 5, 11), (3, 4, 7, 6, 12)]
_ZSHAPE_EXTRA = [(3, 9, 4), (9, 8, 4)]
_ZSHAPE_BOUNDARY = [(0, 1), (1, 3), (3, 9), (9, 8), (8, 4), (4, 7), (7, 6), (6, 5), (5, 2), (2, 0)]

DOMAINS = ("LShape", "ZShape")


def _fan(squares):
    tris = []
    for a, b, c, d, m in squares:
        tris += [(a, b, m), (b, c, m), (c, d, m), (d, a, m)]
    return tris


def _normalize(vertices, triangles):
    """Orient counter-clockwise and rotate the longest edge into position 0."""
    out = []
    for tri in triangles:
        tri = list(tri)
        if _signed_areas(vertices, np.array([tri]))[0] < 0:
            tri = [tri[0], tri[2], tri[1]]
        best = None
        for k in range(3):
            a, b = tri[k], tri[(k + 1) % 3]
            length = np.linalg.norm(vertices[a] - vertices[b])
            key = (-round(length, 12), tuple(sorted((a, b))))
            if best is None or key < best[0]:
                best = (key, k)
        k = best[1]
        out.append(tri[k:] + tri[:k])
    return np.array(out, dtype=np.int64)


def build_initial(domain_name: str) -> Mesh:
    """Initial mesh of the L-shaped (12 triangles) or Z-shaped (14 triangles) domain."""
    if domain_name == "LShape":
        vertices = _LSHAPE_VERTICES
        tris = _fan(_LSHAPE_SQUARES)
        boundary = _LSHAPE_BOUNDARY
    elif domain_name == "ZShape":
        vertices = _ZSHAPE_VERTICES
        tris = _fan(_ZSHAPE_SQUARES) + _ZSHAPE_EXTRA
        boundary = _ZSHAPE_BOUNDARY
    else:
        raise ValueError(f"unknown domain {domain_name!r}; expected one of {DOMAINS}")
    return Mesh(vertices.copy(), _normalize(vertices, tris), np.array(boundary), name=domain_name)


# ------------------------------------------------------------ refinement

def refine_nvb(mesh: Mesh, marks: MarkSet) -> Mesh:
    """Newest vertex bisection with closure.

    Marked triangles get their refinement edge bisected. A marked interior
    edge marks both adjacent triangles; a marked boundary edge is bisected
    itself, which its owning triangle then resolves. The closure bisects
    refinement edges until no hanging node remains. An empty mark set
    returns ``mesh`` itself.
    """
    marks.validate(mesh)
    e2e = mesh.element_edges
    marked = np.zeros(len(mesh.edges), dtype=bool)
    marked[e2e[marks.triangles, 0]] = True
    adjacent = mesh.edge_triangles[mesh.interior_edge_ids[marks.interior_edges]].ravel()
    marked[e2e[adjacent, 0]] = True
    marked[mesh.boundary_edge_ids[marks.boundary_edges]] = True
    if not marked.any():
        return mesh
    return _refine_edges(mesh, marked)


def _refine_edges(mesh: Mesh, marked: np.ndarray) -> Mesh:
    """Close the edge marking and bisect (``marked`` is modified in place)."""
    e2e = mesh.element_edges
    while True:
        need = marked[e2e].any(axis=1) & ~marked[e2e[:, 0]]
        if not need.any():
            break
        marked[e2e[need, 0]] = True

    nv = mesh.n_vertices
    new_id = np.full(len(mesh.edges), -1, dtype=np.int64)
    n_new = int(marked.sum())
    new_id[marked] = nv + np.arange(n_new)
    parents_new = mesh.edges[marked]
    vertices = np.vstack([mesh.vertices, 0.5 * (mesh.vertices[parents_new[:, 0]] + mesh.vertices[parents_new[:, 1]])])
    vertex_parents = np.vstack([np.repeat(np.arange(nv)[:, None], 2, axis=1), parents_new])

    a, b, c = mesh.triangles.T
    m0, m1, m2 = new_id[e2e[:, 0]], new_id[e2e[:, 1]], new_id[e2e[:, 2]]
    r1, r2 = m1 >= 0, m2 >= 0
    r0 = m0 >= 0
    gen = mesh.generation

    pieces, gens, parents = [], [], []

    def emit(mask, tris, dgen):
        idx = np.flatnonzero(mask)
        for t in tris:
            pieces.append(np.stack([x[idx] for x in t], axis=1))
            gens.append(gen[idx] + dgen)
            parents.append(idx)

    emit(~r0, [(a, b, c)], 0)
    emit(r0 & ~r1 & ~r2, [(c, a, m0), (b, c, m0)], 1)
    emit(r0 & r1 & ~r2, [(c, a, m0)], 1)
    emit(r0 & r1 & ~r2, [(m0, b, m1), (c, m0, m1)], 2)
    emit(r0 & ~r1 & r2, [(m0, c, m2), (a, m0, m2)], 2)
    emit(r0 & ~r1 & r2, [(b, c, m0)], 1)
    emit(r0 & r1 & r2, [(m0, c, m2), (a, m0, m2), (m0, b, m1), (c, m0, m1)], 2)

    triangles = np.vstack(pieces)
    generation = np.concatenate(gens)
    triangle_parent = np.concatenate(parents)
    order = np.argsort(triangle_parent, kind="stable")

    bmid = new_id[mesh.boundary_edge_ids]
    split = bmid >= 0
    nb = mesh.n_boundary_edges
    counts = np.where(split, 2, 1)
    boundary = np.empty((counts.sum(), 2), dtype=np.int64)
    start = np.concatenate([[0], np.cumsum(counts)[:-1]])
    boundary[start, 0] = mesh.boundary[:, 0]
    boundary[start, 1] = np.where(split, bmid, mesh.boundary[:, 1])
    s = start[split] + 1
    boundary[s, 0] = bmid[split]
    boundary[s, 1] = mesh.boundary[split, 1]
    boundary_parent = np.repeat(np.arange(nb), counts)

    return Mesh(
        vertices,
        triangles[order],
        boundary,
        generation=generation[order],
        level=mesh.level + 1,
        vertex_parents=vertex_parents,
        boundary_parent=boundary_parent,
        triangle_parent=triangle_parent[order],
        name=mesh.name,
    )


def refine_uniform(mesh: Mesh) -> Mesh:
    """Mark every triangle and boundary edge (the theta = 1 case of Doerfler marking)."""
    return refine_nvb(mesh, MarkSet.everything(mesh))


def refine_red(mesh: Mesh) -> Mesh:
    """Bisect every edge once, splitting each triangle into four sons."""
    return _refine_edges(mesh, np.ones(len(mesh.edges), dtype=bool))


def prolongate(fine: Mesh, U: np.ndarray) -> np.ndarray:
    """Inject a P1 function of the father mesh into the nested space of ``fine``."""
    p = fine.vertex_parents
    return 0.5 * (U[p[:, 0]] + U[p[:, 1]])


def prolongate_boundary(fine: Mesh, Phi: np.ndarray) -> np.ndarray:
    """Inject a P0 boundary function of the father mesh into ``fine``."""
    return Phi[fine.boundary_parent]


# -------------------------------------------------------------- measures

def mesh_size(mesh: Mesh, kind: str, index) -> np.ndarray:
    """Local mesh width: ``|T|**(1/2)`` for triangles, ``|E|`` for edges.

    ``kind`` is ``"triangle"``, ``"boundary"`` or ``"edge"`` (global edge id).
    """
    index = np.asarray(index)
    if kind == "triangle":
        return np.sqrt(mesh.areas[index])
    if kind == "boundary":
        return mesh.boundary_lengths[index]
    if kind == "edge":
        e = mesh.edges[index]
        d = mesh.vertices[e[..., 1]] - mesh.vertices[e[..., 0]]
        return np.hypot(d[..., 0], d[..., 1])
    raise ValueError(f"unknown entity kind {kind!r}")


def shape_regularity(mesh: Mesh) -> float:
    """max over triangles of diam(T)^2 / |T|."""
    return float(np.max(mesh.diameters**2 / mesh.areas))


def min_angle(mesh: Mesh) -> float:
    """Smallest interior angle (radians) over all triangles."""
    p = mesh.vertices[mesh.triangles]
    angles = []
    for k in range(3):
        u = p[:, (k + 1) % 3] - p[:, k]
        v = p[:, (k + 2) % 3] - p[:, k]
        cosang = np.einsum("ij,ij->i", u, v) / (np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1))
        angles.append(np.arccos(np.clip(cosang, -1.0, 1.0)))
    return float(np.min(angles))


# ----------------------------------------------------------------- dump

def dump_mesh(mesh: Mesh, path) -> None:
    """Write the plain-text VERTICES / TRIANGLES / BOUNDARY dump."""
    lines = ["VERTICES"]
    lines += [f"{x:.17g} {y:.17g}" for x, y in mesh.vertices]
    lines.append("TRIANGLES")
    lines += [f"{a} {b} {c}" for a, b, c in mesh.triangles]
    lines.append("BOUNDARY")
    lines += [f"{a} {b}" for a, b in mesh.boundary]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_mesh(path) -> Mesh:
    blocks: dict[str, list[list[str]]] = {}
    current = None
    with open(path) as fh:
        for raw in fh:
            line = raw.strip()
            if not line:
                continue
            if line in ("VERTICES", "TRIANGLES", "BOUNDARY"):
                current = line
                blocks[current] = []
                continue
            if current is None:
                raise ValueError("mesh dump must start with a block header")
            blocks[current].append(line.split())
    try:
        vertices = np.array(blocks["VERTICES"], dtype=float).reshape(-1, 2)
        triangles = np.array(blocks["TRIANGLES"], dtype=np.int64).reshape(-1, 3)
        boundary = np.array(blocks["BOUNDARY"], dtype=np.int64).reshape(-1, 2)
    except KeyError as exc:
        raise ValueError(f"missing block {exc}") from None
    return Mesh(vertices, triangles, boundary)


def polygon_diameter(points: Iterable) -> float:
    pts = np.asarray(points, dtype=float)
    d = pts[:, None, :] - pts[None, :, :]
    return float(np.sqrt((d**2).sum(-1)).max())

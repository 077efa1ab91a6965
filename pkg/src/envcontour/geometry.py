"""Directions, reflection points, Voronoi cells and convex hulls.

The Voronoi cell of an origin ``o`` with respect to the reflection points
``s_j = o + 2 c_j u_j`` is the half-space intersection
``{x : u_j . (x - o) <= c_j}`` (all ``c_j > 0``).  It is computed through
polar duality: after translating ``o`` to zero each constraint becomes
``a_j . y <= 1`` with ``a_j = u_j / c_j``; the cell is the polar body of
``conv{a_j}``, so every facet of the dual hull yields one cell vertex and
every dual hull vertex yields one cell facet.  A constraint whose dual point
is not a hull vertex is redundant, i.e. its reflection point is not a
Delaunay neighbour of ``o``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import optimize
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import ConvexHull, QhullError, cKDTree

from .errors import InputError, OriginNotInteriorError, RankError, UnboundedCellError
from .model import make_rng
from .percentile import PercentileTable, as_directions, recentre

DEGENERACY_RTOL = 1e-8
VERTEX_MERGE_RTOL = 1e-10

__all__ = [
    "HalfSpace",
    "ReflectionSet",
    "Polytope",
    "ConnectivityReport",
    "grid_directions_2d",
    "sample_directions_uniform",
    "reflection_set",
    "voronoi_cell",
    "convex_hull",
    "delaunay_connectivity",
    "voronoi_cell_with_connectivity",
    "check_positive_span",
]


@dataclass(frozen=True, eq=False)
class HalfSpace:
    """``{x : u . x <= c}`` with unit normal ``u``."""

    u: np.ndarray
    c: float

    def __post_init__(self):
        object.__setattr__(self, "u", as_directions(self.u)[0])
        if not np.isfinite(self.c):
            raise InputError(f"half-space offset must be finite, got {self.c}")
        object.__setattr__(self, "c", float(self.c))

    def contains(self, x, tol: float = 0.0):
        return np.asarray(x) @ self.u <= self.c + tol


@dataclass(frozen=True, eq=False)
class ReflectionSet:
    origin: np.ndarray
    points: np.ndarray
    directions: np.ndarray
    offsets: np.ndarray  # recentred percentiles C^o_j

    def __len__(self):
        return self.offsets.size

    @property
    def dim(self):
        return self.origin.size


@dataclass(eq=False)
class Polytope:
    """Bounded convex polytope given by vertices and facets.

    ``facets[i]`` lists the vertex indices on facet ``i`` whose outward unit
    normal is ``normals[i]`` and offset ``offsets[i]`` (``n . x <= d``).
    ``facet_labels[i]`` is the index of the generating direction for Voronoi
    cells, ``-1`` for facets that are not tied to an input direction.
    """

    vertices: np.ndarray
    facets: list
    normals: np.ndarray
    offsets: np.ndarray
    facet_labels: np.ndarray = field(default=None)

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float)
        self.normals = np.asarray(self.normals, dtype=float)
        self.offsets = np.asarray(self.offsets, dtype=float)
        if self.facet_labels is None:
            self.facet_labels = np.full(len(self.facets), -1, dtype=int)

    @property
    def dim(self):
        return self.vertices.shape[1]

    def support(self, u):
        """Support function ``max_v u . v`` for one or many directions."""
        u = np.asarray(u, dtype=float)
        vals = u @ self.vertices.T
        return vals.max(axis=-1) if u.ndim == 2 else float(vals.max())

    def argsupport(self, u):
        return np.argmax(np.atleast_2d(u) @ self.vertices.T, axis=1)

    def contains(self, points, tol: float = 1e-9):
        pts = np.atleast_2d(points)
        return np.all(pts @ self.normals.T <= self.offsets + tol, axis=1)

    def max_violation(self, points=None) -> float:
        pts = self.vertices if points is None else np.atleast_2d(points)
        return float((pts @ self.normals.T - self.offsets).max())

    @property
    def diameter(self) -> float:
        v = self.vertices
        if len(v) > 2000:
            v = v[ConvexHull(v).vertices] if self.dim > 1 else v
        diff = v[:, None, :] - v[None, :, :]
        return float(np.sqrt((diff**2).sum(-1)).max())

    def ordered_vertices_2d(self) -> np.ndarray:
        """Vertices in counter-clockwise order (2D only)."""
        if self.dim != 2:
            raise InputError("ordered_vertices_2d needs a planar polytope")
        c = self.vertices.mean(axis=0)
        ang = np.arctan2(self.vertices[:, 1] - c[1], self.vertices[:, 0] - c[0])
        return self.vertices[np.argsort(ang, kind="stable")]

    def triangles(self) -> np.ndarray:
        """Outward-oriented boundary triangles (3D only), as vertex indices."""
        if self.dim != 3:
            raise InputError("triangles needs a 3D polytope")
        hull = ConvexHull(self.vertices)
        tris = hull.simplices.copy()
        centre = self.vertices.mean(axis=0)
        for k, tri in enumerate(tris):
            p = self.vertices[tri]
            n = np.cross(p[1] - p[0], p[2] - p[0])
            if n @ (p[0] - centre) < 0:
                tris[k] = tri[[0, 2, 1]]
        return tris

    def boundary_points(self, spacing: float) -> np.ndarray:
        """Points covering the boundary with roughly ``spacing`` resolution."""
        if self.dim == 2:
            poly = self.ordered_vertices_2d()
            nxt = np.roll(poly, -1, axis=0)
            out = []
            for a, b in zip(poly, nxt):
                k = max(1, int(np.ceil(np.linalg.norm(b - a) / spacing)))
                t = np.arange(k)[:, None] / k
                out.append(a + t * (b - a))
            return np.vstack(out)
        if self.dim == 3:
            out = [self.vertices]
            for tri in self.triangles():
                p = self.vertices[tri]
                edge = max(np.linalg.norm(p[1] - p[0]), np.linalg.norm(p[2] - p[0]), np.linalg.norm(p[2] - p[1]))
                k = max(1, int(np.ceil(edge / spacing)))
                i, j = np.meshgrid(np.arange(k + 1), np.arange(k + 1), indexing="ij")
                keep = i + j <= k
                w1, w2 = i[keep] / k, j[keep] / k
                out.append(p[0] + w1[:, None] * (p[1] - p[0]) + w2[:, None] * (p[2] - p[0]))
            return np.vstack(out)
        return self.vertices

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "vertices": self.vertices,
            "facets": [list(map(int, f)) for f in self.facets],
            "normals": self.normals,
            "offsets": self.offsets,
            "facet_labels": self.facet_labels,
        }

    def vertices_csv(self, names=None) -> str:
        from .io import format_csv

        names = list(names) if names else [f"x{i + 1}" for i in range(self.dim)]
        verts = self.ordered_vertices_2d() if self.dim == 2 else self.vertices
        return format_csv(names, verts)

    def to_obj(self, vertex_values=None) -> str:
        """Wavefront OBJ mesh (3D).  ``vertex_values`` adds a grey-to-red colour per vertex."""
        tris = self.triangles()
        lines = ["# envcontour polytope"]
        if vertex_values is not None:
            vals = np.asarray(vertex_values, dtype=float)
            top = vals.max() if vals.size and vals.max() > 0 else 1.0
            t = np.clip(vals / top, 0.0, 1.0)
        for i, v in enumerate(self.vertices):
            if vertex_values is None:
                lines.append("v %r %r %r" % tuple(map(float, v)))
            else:
                r, g, b = 0.6 + 0.4 * t[i], 0.6 * (1 - t[i]), 0.6 * (1 - t[i])
                lines.append("v %r %r %r %.4f %.4f %.4f" % (*map(float, v), r, g, b))
        for tri in tris:
            lines.append("f %d %d %d" % tuple(int(k) + 1 for k in tri))
        return "\n".join(lines) + "\n"


@dataclass(frozen=True, eq=False)
class ConnectivityReport:
    """Which reflection points share a Delaunay simplex with the origin.

    ``connected[j]`` is true when the constraint of direction ``j`` carries a
    facet of positive measure.  ``touching`` lists directions whose plane
    meets the cell only in a lower-dimensional face (non-unique Delaunay
    triangulation); any such direction sets ``degenerate``.
    ``neighbours[j]`` (for disconnected ``j``) are the directions whose facets
    meet at the cell vertex closest to plane ``j``.
    """

    connected: np.ndarray
    degenerate: bool
    offending: np.ndarray
    touching: np.ndarray
    neighbours: dict
    slack: np.ndarray  # relative distance of plane j from the cell, >= 0

    @property
    def all_connected(self) -> bool:
        return bool(self.connected.all())

    def to_dict(self) -> dict:
        return {
            "connected": self.connected.astype(bool).tolist(),
            "degenerate": bool(self.degenerate),
            "offending": [int(i) for i in self.offending],
            "touching": [int(i) for i in self.touching],
            "neighbours": {str(k): [int(i) for i in v] for k, v in sorted(self.neighbours.items())},
            "n_disconnected": int(len(self.offending)),
        }


def grid_directions_2d(M: int) -> np.ndarray:
    """``M`` equally spaced planar directions at angles ``2 pi j / M``."""
    if M < 3:
        raise InputError(f"at least 3 directions are needed to bound a planar cell, got {M}")
    ang = 2.0 * np.pi * np.arange(M) / M
    return np.column_stack([np.cos(ang), np.sin(ang)])


def sample_directions_uniform(M: int, dim: int, seed: int) -> np.ndarray:
    """Uniform random directions by normalising i.i.d. standard normal vectors."""
    if dim < 2:
        raise InputError(f"dim must be >= 2, got {dim}")
    if M < dim + 1:
        raise InputError(f"need at least dim+1 = {dim + 1} directions, got {M}")
    v = make_rng(seed).standard_normal((M, dim))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def fibonacci_directions_3d(M: int) -> np.ndarray:
    """Quasi-uniform directions on the 2-sphere (golden-angle spiral)."""
    if M < 4:
        raise InputError(f"need at least 4 directions, got {M}")
    k = np.arange(M) + 0.5
    z = 1 - 2 * k / M
    r = np.sqrt(1 - z**2)
    phi = np.pi * (3 - np.sqrt(5)) * k
    return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])


def reflection_set(table: PercentileTable, o) -> ReflectionSet:
    """Mirror images of ``o`` in every percentile hyperplane of ``table``."""
    o = np.asarray(o, dtype=float)
    U = table.directions
    c = recentre(table.values, U, o)
    bad = np.flatnonzero(~(c > 0))
    if bad.size:
        j = int(bad[np.argmin(c[bad])])
        raise OriginNotInteriorError(
            f"origin is not strictly interior: C^o = {c[j]:.6g} <= 0 for direction {j} {U[j].tolist()}",
            index=j,
            direction=U[j],
            value=c[j],
        )
    return ReflectionSet(origin=o, points=o + 2.0 * c[:, None] * U, directions=U, offsets=c)


def check_positive_span(U, tol: float = 1e-9) -> None:
    """Raise :class:`UnboundedCellError` unless the rows of ``U`` positively span the space.

    Solves ``max t`` over convex combinations ``lambda`` with
    ``sum_j lambda_j u_j = 0`` and ``lambda_j >= t``; the directions positively
    span iff they have full rank and the optimum is strictly positive.
    """
    U = np.atleast_2d(U)
    M, d = U.shape
    if M < d + 1 or np.linalg.matrix_rank(U) < d:
        raise UnboundedCellError("directions do not span the space; the cell is unbounded")
    c = np.zeros(M + 1)
    c[-1] = -1.0
    A_eq = np.zeros((d + 1, M + 1))
    A_eq[:d, :M] = U.T
    A_eq[d, :M] = 1.0
    b_eq = np.zeros(d + 1)
    b_eq[d] = 1.0
    A_ub = np.hstack([-np.eye(M), np.ones((M, 1))])
    res = optimize.linprog(
        c,
        A_ub=A_ub,
        b_ub=np.zeros(M),
        A_eq=A_eq,
        b_eq=b_eq,
        bounds=[(0, None)] * M + [(None, 1.0)],
        method="highs",
    )
    if res.status != 0 or -res.fun <= tol / M:
        raise UnboundedCellError("directions do not positively span the space; the cell is unbounded")


def _cluster(points, tol):
    """Label points so that points closer than ``tol`` share a label."""
    n = len(points)
    if n == 0:
        return np.zeros(0, dtype=int), 0
    pairs = cKDTree(points).query_pairs(tol, output_type="ndarray")
    if len(pairs) == 0:
        return np.arange(n), n
    graph = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    k, labels = connected_components(graph, directed=False)
    # relabel in order of first appearance for determinism
    _, first = np.unique(labels, return_index=True)
    order = np.argsort(first)
    remap = np.empty(k, dtype=int)
    remap[labels[first[order]]] = np.arange(k)
    return remap[labels], k


def _merge(points, labels, k):
    out = np.zeros((k, points.shape[1]))
    np.add.at(out, labels, points)
    return out / np.bincount(labels, minlength=k)[:, None]


def _affine_rank(points, rtol=1e-10):
    pts = np.asarray(points, dtype=float)
    if len(pts) < 2:
        return 0
    centred = pts - pts.mean(axis=0)
    sv = np.linalg.svd(centred, compute_uv=False)
    scale = max(np.abs(pts).max(), 1e-300)
    return int((sv > rtol * scale * np.sqrt(len(pts))).sum())


def voronoi_cell_with_connectivity(o, S: ReflectionSet) -> tuple[Polytope, ConnectivityReport]:
    """Voronoi cell of ``o`` w.r.t. ``S`` together with its Delaunay connectivity."""
    o = np.asarray(o, dtype=float)
    U, c = S.directions, S.offsets
    if not np.allclose(o, S.origin):
        # re-express the offsets for the requested origin
        c = recentre(c + U @ S.origin, U, o)
        if np.any(c <= 0):
            raise OriginNotInteriorError("origin is not strictly interior for this reflection set")
    M, d = U.shape
    check_positive_span(U)
    dual = U / c[:, None]
    try:
        hull = ConvexHull(dual)
    except QhullError as exc:
        raise UnboundedCellError(f"dual hull failed: {exc}") from None
    normals, offs = hull.equations[:, :d], hull.equations[:, d]
    if np.any(offs >= 0):
        raise UnboundedCellError("origin not interior to the dual hull; the cell is unbounded")
    raw = normals / (-offs)[:, None]
    scale = np.abs(raw).max()
    labels, k = _cluster(raw, VERTEX_MERGE_RTOL * scale)
    local = _merge(raw, labels, k)
    verts = o + local

    # facets: hull vertex j -> cell vertices from dual simplices containing j
    incident: dict[int, set] = {}
    for f, simplex in enumerate(hull.simplices):
        for j in simplex:
            incident.setdefault(int(j), set()).add(int(labels[f]))
    hull_vertices = set(int(j) for j in hull.vertices)

    # relative slack of each plane at the closest cell vertex
    rel = (c[:, None] - U @ local.T) / c[:, None]
    slack = np.maximum(rel.min(axis=1), 0.0)
    nearest = rel.argmin(axis=1)

    connected = np.zeros(M, dtype=bool)
    facets, fnormals, foffsets, flabels = [], [], [], []
    for j in range(M):
        if j not in hull_vertices:
            continue
        idx = sorted(incident.get(j, ()))
        if len(idx) >= d and _affine_rank(local[idx]) >= d - 1:
            connected[j] = True
            facets.append(np.array(idx, dtype=int))
            fnormals.append(U[j])
            foffsets.append(c[j] + U[j] @ o)
            flabels.append(j)

    touching = np.flatnonzero(~connected & (slack < DEGENERACY_RTOL))
    offending = np.flatnonzero(~connected)
    vertex_planes = [set() for _ in range(k)]
    for f, j in zip(facets, flabels):
        for v in f:
            vertex_planes[v].add(j)
    neighbours = {int(j): sorted(vertex_planes[nearest[j]]) for j in offending}

    poly = Polytope(
        vertices=verts,
        facets=facets,
        normals=np.array(fnormals).reshape(-1, d),
        offsets=np.array(foffsets),
        facet_labels=np.array(flabels, dtype=int),
    )
    report = ConnectivityReport(
        connected=connected,
        degenerate=bool(touching.size),
        offending=offending,
        touching=touching,
        neighbours=neighbours,
        slack=slack,
    )
    return poly, report


def voronoi_cell(o, S: ReflectionSet) -> Polytope:
    """Voronoi cell ``{x : |x - o| <= |x - s_j| for all j}`` as a polytope."""
    return voronoi_cell_with_connectivity(o, S)[0]


def delaunay_connectivity(o, S: ReflectionSet) -> ConnectivityReport:
    """Per reflection point, whether it is a Delaunay neighbour of ``o``."""
    return voronoi_cell_with_connectivity(o, S)[1]


def convex_hull(points) -> Polytope:
    """Convex hull as a :class:`Polytope`; coplanar hull triangles are merged into facets."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    n, d = pts.shape
    if n < d + 1 or _affine_rank(pts) < d:
        raise RankError(f"{n} points in R^{d} are affinely dependent; no full-dimensional hull")
    try:
        hull = ConvexHull(pts)
    except QhullError as exc:
        raise RankError(f"hull construction failed: {exc}") from None
    keep = np.asarray(hull.vertices)
    keep.sort()
    remap = -np.ones(n, dtype=int)
    remap[keep] = np.arange(keep.size)
    eq = hull.equations
    scale = max(1.0, np.abs(eq[:, d]).max())
    eq_labels, nf = _cluster(eq / np.array([1.0] * d + [scale]), 1e-9)
    facets, normals, offsets = [], [], []
    for f in range(nf):
        members = np.flatnonzero(eq_labels == f)
        idx = sorted(set(int(remap[v]) for m in members for v in hull.simplices[m]) - {-1})
        nrm = eq[members, :d].mean(axis=0)
        nrm /= np.linalg.norm(nrm)
        facets.append(np.array(idx, dtype=int))
        normals.append(nrm)
        offsets.append(float(-eq[members, d].mean()))
    return Polytope(vertices=pts[keep], facets=facets, normals=np.array(normals), offsets=np.array(offsets))

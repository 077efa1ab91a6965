"""Voronoi environmental contours, their correction and validation.

Pipeline (:func:`voronoi_contour`): sample the model, estimate the
percentile table, choose an interior origin, mirror it in every percentile
hyperplane, take the Voronoi cell of the origin and check that every
reflection point is a Delaunay neighbour of the origin.  Cells failing the
check are *invalid*; :func:`corrected_contour` enlarges them into a valid
(generally improper) contour.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize
from scipy.spatial.distance import directed_hausdorff

from .errors import DistributionDegenerateError, InputError, UnboundedCellError
from .geometry import (
    ConnectivityReport,
    HalfSpace,
    Polytope,
    convex_hull,
    reflection_set,
    voronoi_cell_with_connectivity,
)
from .model import JointModel, SampleSet, sample
from .percentile import PercentileTable, estimate_table, recentre

log = logging.getLogger(__name__)

PROPER_CANDIDATE = "proper-candidate"
INVALID = "invalid"
DEGENERATE = "degenerate"

__all__ = [
    "ContourResult",
    "ValidityReport",
    "DirectContour",
    "select_origin",
    "chebyshev_centre",
    "contour_from_table",
    "voronoi_contour",
    "corrected_contour",
    "validate_contour",
    "exceedance_probability",
    "exceedance_from_samples",
    "direct_contour_2d",
    "segment_crossings",
    "hausdorff",
]


@dataclass(eq=False)
class ContourResult:
    cell: Polytope
    table: PercentileTable
    origin: np.ndarray
    connectivity: ConnectivityReport
    status: str
    origin_method: str = "explicit"
    refinement: list = field(default_factory=list)
    samples: SampleSet | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "origin": self.origin,
            "origin_method": self.origin_method,
            "table": self.table.metadata(),
            "cell": self.cell.to_dict(),
            "connectivity": self.connectivity.to_dict(),
            "refinement": self.refinement,
        }


@dataclass(frozen=True, eq=False)
class ValidityReport:
    """Support gaps ``g_j = C_j - max_v u_j . v`` and the resulting class.

    ``proper``: all ``|g_j| <= tol``; ``valid-improper``: all ``g_j <= tol``
    with some ``g_j < -tol``; ``invalid``: some ``g_j > tol``.
    """

    gaps: np.ndarray
    tol: float

    @property
    def max_gap(self) -> float:
        return float(self.gaps.max())

    @property
    def classification(self) -> str:
        if self.max_gap > self.tol:
            return "invalid"
        if np.abs(self.gaps).max() <= self.tol:
            return "proper"
        return "valid-improper"

    @property
    def is_valid(self) -> bool:
        return self.classification != "invalid"

    def to_dict(self) -> dict:
        return {
            "classification": self.classification,
            "max_gap": self.max_gap,
            "min_gap": float(self.gaps.min()),
            "tol": self.tol,
            "n_violated": int((self.gaps > self.tol).sum()),
            "gaps": self.gaps,
        }


# -- origin ---------------------------------------------------------------------


def select_origin(samples, tol: float = 1e-8, max_iter: int = 500) -> np.ndarray:
    """Geometric median of the samples by Weiszfeld iteration.

    Falls back to the coordinate-wise median (with a warning) when the
    iteration does not converge within ``max_iter`` steps.  The caller still
    has to verify that the point is interior to every half-space.
    """
    pts = samples.points if isinstance(samples, SampleSet) else np.atleast_2d(np.asarray(samples, dtype=float))
    n, d = pts.shape
    if n < d + 1 and not np.all(pts == pts[0]):
        raise InputError(f"need at least dim+1 = {d + 1} samples for an origin, got {n}")
    x = pts.mean(axis=0)
    floor = 1e-12 * max(1.0, float(np.abs(pts).max()))
    for _ in range(max_iter):
        dist = np.maximum(np.linalg.norm(pts - x, axis=1), floor)
        w = 1.0 / dist
        x_new = (w @ pts) / w.sum()
        step = np.linalg.norm(x_new - x)
        x = x_new
        if step <= tol * (1.0 + np.linalg.norm(x)):
            return x
    warnings.warn("Weiszfeld iteration did not converge; using coordinate-wise median", stacklevel=2)
    return np.median(pts, axis=0)


def chebyshev_centre(table: PercentileTable) -> tuple[np.ndarray, float]:
    """Point maximising the minimum slack ``C_j - u_j . o`` over the table.

    Returns ``(o, slack)``.  Raises :class:`DistributionDegenerateError` when
    the half-space intersection has no interior.
    """
    U, C = table.directions, table.values
    M, d = U.shape
    cost = np.zeros(d + 1)
    cost[-1] = -1.0
    A = np.hstack([U, np.ones((M, 1))])
    res = optimize.linprog(cost, A_ub=A, b_ub=C, bounds=[(None, None)] * d + [(None, None)], method="highs")
    if res.status == 3:
        raise UnboundedCellError("directions do not positively span the space")
    if res.status != 0 or -res.fun <= 0:
        raise DistributionDegenerateError("the estimated half-spaces have no common interior point")
    return res.x[:d], float(-res.fun)


def _interior(table, o):
    return bool(np.all(recentre(table.values, table.directions, o) > 0))


def contour_from_table(table: PercentileTable, origin=None, samples=None):
    """Voronoi cell and connectivity for a given table.

    ``origin`` may be a point, ``"median"`` (needs ``samples``) or ``"lp"``.
    Returns ``(cell, connectivity, origin, method)``.
    """
    method = "explicit"
    if origin is None or isinstance(origin, str):
        method = origin or "lp"
        if method == "median":
            if samples is None:
                raise InputError("origin='median' needs the sample set")
            o = select_origin(samples)
            if not _interior(table, o):
                log.warning("geometric median is not interior; using the linear-programming centre")
                o, _ = chebyshev_centre(table)
                method = "median+lp"
        elif method == "lp":
            o, _ = chebyshev_centre(table)
        else:
            raise InputError(f"unknown origin strategy {origin!r}")
    else:
        o = np.asarray(origin, dtype=float)
    S = reflection_set(table, o)
    cell, conn = voronoi_cell_with_connectivity(o, S)
    return cell, conn, o, method


def _status(conn: ConnectivityReport) -> str:
    if not conn.all_connected:
        return INVALID
    if conn.degenerate:
        return DEGENERATE
    return PROPER_CANDIDATE


def _round_seed(seed: int, r: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(r)]).generate_state(1)[0])


def voronoi_contour(
    model: JointModel,
    pe: float,
    directions,
    n: int,
    seed: int,
    origin="median",
    conservative: int = 0,
    refine_rounds: int = 3,
    refine_factor: int = 4,
    samples: SampleSet | None = None,
) -> ContourResult:
    """Voronoi contour of ``model`` at exceedance probability ``pe``.

    Disconnected directions (and the directions whose facets surround them)
    are re-estimated from a fresh sample ``refine_factor`` times larger, at
    most ``refine_rounds`` times.  Directions that stay disconnected make the
    result ``invalid``.
    """
    if samples is None:
        samples = sample(model, n, seed)
    directions = np.asarray(directions, dtype=float)
    table = estimate_table(samples, directions, pe, conservative=conservative)
    cell, conn, o, method = contour_from_table(table, origin, samples)
    history = []
    for r in range(1, refine_rounds + 1):
        if conn.all_connected:
            break
        idx = set(int(j) for j in conn.offending)
        for j in conn.offending:
            idx.update(conn.neighbours.get(int(j), ()))
        idx = np.array(sorted(idx), dtype=int)
        rseed = _round_seed(seed, r)
        extra = sample(model, refine_factor * samples.n, rseed)
        sub = estimate_table(extra, table.directions[idx], pe, conservative=conservative)
        values = table.values.copy()
        values[idx] = sub.values
        stderr = None
        if table.stderr is not None and sub.stderr is not None:
            stderr = table.stderr.copy()
            stderr[idx] = sub.stderr
        table = table.with_values(values, stderr=stderr, rule="order-statistic+refined")
        del extra
        if not _interior(table, o):
            o, _ = chebyshev_centre(table)
            method += "+lp"
        cell, conn = voronoi_cell_with_connectivity(o, reflection_set(table, o))
        history.append(
            {"round": r, "seed": rseed, "n": refine_factor * samples.n, "re_estimated": idx.tolist(),
             "disconnected_after": conn.offending.tolist()}
        )
    return ContourResult(
        cell=cell,
        table=table,
        origin=o,
        connectivity=conn,
        status=_status(conn),
        origin_method=method,
        refinement=history,
        samples=samples,
    )


# -- correction and validation ---------------------------------------------------


def corrected_contour(result, table: PercentileTable | None = None) -> Polytope:
    """Enlarge a (possibly invalid) Voronoi cell so every hyperplane touches it.

    For each direction the cell vertex furthest along it is projected onto
    the percentile hyperplane; the corrected contour is the convex hull of
    the cell vertices and these projections.
    """
    if isinstance(result, ContourResult):
        cell, table = result.cell, table or result.table
    else:
        cell = result
        if table is None:
            raise InputError("corrected_contour needs the percentile table")
    U, C = table.directions, table.values
    V = cell.vertices
    best = V[np.argmax(U @ V.T, axis=1)]
    z = best + (C - np.einsum("ij,ij->i", best, U))[:, None] * U
    hull = convex_hull(np.vstack([V, z]))
    match = U @ hull.normals.T
    labels = np.full(len(hull.facets), -1, dtype=int)
    j = match.argmax(axis=0)
    tight = (match[j, np.arange(match.shape[1])] > 1 - 1e-12) & (np.abs(hull.offsets - C[j]) <= 1e-9 * (1 + np.abs(C[j])))
    labels[tight] = j[tight]
    hull.facet_labels = labels
    return hull


def validate_contour(poly: Polytope, table: PercentileTable, tol: float | None = None) -> ValidityReport:
    """Support gaps of ``poly`` against the table.  ``tol`` defaults to ``1e-6 * diameter``."""
    if poly.vertices.size == 0:
        raise InputError("empty polytope")
    if tol is None:
        tol = 1e-6 * poly.diameter
    gaps = table.values - poly.support(table.directions)
    return ValidityReport(gaps=gaps, tol=float(tol))


def exceedance_from_samples(normals, offsets, samples, chunk: int = 32):
    """Fraction of samples with ``n_i . x > d_i`` for each half-space, and its standard error."""
    pts = samples.points if isinstance(samples, SampleSet) else np.atleast_2d(samples)
    N = np.atleast_2d(np.asarray(normals, dtype=float))
    d = np.atleast_1d(np.asarray(offsets, dtype=float))
    n = pts.shape[0]
    counts = np.empty(len(d))
    for s in range(0, len(d), chunk):
        counts[s : s + chunk] = ((N[s : s + chunk] @ pts.T) > d[s : s + chunk, None]).sum(axis=1)
    p = counts / n
    return p, np.sqrt(p * (1 - p) / n)


def exceedance_probability(h, model: JointModel, n: int, seed: int) -> tuple[float, float]:
    """Monte Carlo estimate of ``P(u . X > c)`` with its binomial standard error."""
    if not isinstance(h, HalfSpace):
        h = HalfSpace(*h)
    if n < 10_000:
        raise InputError(f"exceedance estimates need n >= 10^4 samples, got {n}")
    p, se = exceedance_from_samples(h.u[None, :], [h.c], sample(model, n, seed))
    return float(p[0]), float(se[0])


# -- direct sampling baseline ------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DirectContour:
    """Closed polyline through intersections of consecutive percentile lines."""

    points: np.ndarray
    crossings: np.ndarray  # (k, 2) pairs of crossing segment indices

    @property
    def has_loops(self) -> bool:
        return len(self.crossings) > 0

    @property
    def n_crossings(self) -> int:
        return len(self.crossings)


def direct_contour_2d(table: PercentileTable) -> DirectContour:
    """Intersect the lines of consecutive directions (counter-clockwise order)."""
    if table.dim != 2:
        raise InputError("the direct contour is defined for planar tables only")
    U, C = table.directions, table.values
    ang = np.unwrap(np.arctan2(U[:, 1], U[:, 0]))
    step = np.diff(np.append(ang, ang[0] + 2 * np.pi))
    if np.any(step <= 0) or not np.isclose(step.sum(), 2 * np.pi):
        raise InputError("directions must be ordered counter-clockwise around the circle")
    U2, C2 = np.roll(U, -1, axis=0), np.roll(C, -1)
    det = U[:, 0] * U2[:, 1] - U[:, 1] * U2[:, 0]
    if np.any(np.abs(det) < 1e-12):
        raise InputError("consecutive directions are parallel")
    x = (C * U2[:, 1] - C2 * U[:, 1]) / det
    y = (U[:, 0] * C2 - U2[:, 0] * C) / det
    pts = np.column_stack([x, y])
    return DirectContour(points=pts, crossings=segment_crossings(pts))


def segment_crossings(poly) -> np.ndarray:
    """Pairs of non-adjacent segments of a closed polyline that properly cross."""
    P = np.asarray(poly, dtype=float)
    m = len(P)
    A, B = P, np.roll(P, -1, axis=0)
    i, j = np.triu_indices(m, k=2)
    keep = ~((i == 0) & (j == m - 1))
    i, j = i[keep], j[keep]
    if i.size == 0:
        return np.zeros((0, 2), dtype=int)
    # bounding-box prefilter
    lo1, hi1 = np.minimum(A, B), np.maximum(A, B)
    ok = np.all((lo1[i] <= hi1[j]) & (lo1[j] <= hi1[i]), axis=1)
    i, j = i[ok], j[ok]

    def orient(p, q, r):
        return (q[:, 0] - p[:, 0]) * (r[:, 1] - p[:, 1]) - (q[:, 1] - p[:, 1]) * (r[:, 0] - p[:, 0])

    d1 = orient(A[i], B[i], A[j])
    d2 = orient(A[i], B[i], B[j])
    d3 = orient(A[j], B[j], A[i])
    d4 = orient(A[j], B[j], B[i])
    cross = (d1 * d2 < 0) & (d3 * d4 < 0)
    return np.column_stack([i[cross], j[cross]])


def hausdorff(a, b) -> float:
    """Symmetric Hausdorff distance between two point sets."""
    return max(directed_hausdorff(a, b)[0], directed_hausdorff(b, a)[0])

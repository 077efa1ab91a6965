"""Parametric contours from a smooth percentile function.

For a chart ``u(theta)`` of the unit sphere with Jacobian ``J`` and metric
``g = J^T J`` the contour point realising direction ``u(theta)`` is::

    b(theta) = C(theta) u(theta) + J g^{-1} grad_theta C(theta)^T

Existence of a proper convex contour is equivalent to
``kappa(theta | theta') = C(theta) - u(theta) . b(theta') >= 0`` everywhere;
a necessary local condition is positive semi-definiteness of the covariant
Hessian ``Hess C + g C``.

Percentile fields are evaluated in ambient coordinates: every field exposes
the value, gradient and Hessian of some smooth extension ``C~(x)`` off the
sphere, and chart derivatives follow by the chain rule (the result does not
depend on the extension).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import interpolate, stats

from .errors import ChartSingularityError, InputError
from .percentile import PercentileTable, exact_percentile_mixture

POLE_EPS = 1e-3

__all__ = [
    "SphericalChart",
    "PercentileField",
    "ConstantField",
    "GaussianField",
    "MixtureField",
    "SplineField2D",
    "HarmonicField",
    "field_from_table",
    "ParametricContour",
    "ExistenceReport",
    "contour_point",
    "contour_point_u",
    "tangency_check",
    "kappa",
    "existence_scan",
    "reflection_residuals",
    "hessian_criterion",
    "hessian_scan",
    "theta_grid",
    "parametric_contour",
]


# -- charts -----------------------------------------------------------------------


class SphericalChart:
    """Hyperspherical coordinates on the unit ``(dim-1)``-sphere.

    ``u_i = cos(theta_i) prod_{j<i} sin(theta_j)`` for ``i <= dim-2`` and
    ``u_{dim-1} = prod_j sin(theta_j)``.  An optional orthogonal ``rotation``
    gives a second chart of the same atlas whose poles sit elsewhere.
    All evaluators accept a single angle vector or a stack ``(..., dim-1)``.
    """

    def __init__(self, dim: int, rotation=None):
        if dim < 2:
            raise InputError(f"dim must be >= 2, got {dim}")
        self.dim = dim
        self.rotation = None if rotation is None else np.asarray(rotation, dtype=float)

    def __repr__(self):
        return f"SphericalChart(dim={self.dim}, rotated={self.rotation is not None})"

    @property
    def nparam(self):
        return self.dim - 1

    def _factors(self, theta):
        """Per-coordinate factors and their first two derivatives, shape (..., n, n-1)."""
        th = np.asarray(theta, dtype=float)
        if th.shape[-1] != self.nparam:
            raise InputError(f"expected {self.nparam} angles, got shape {th.shape}")
        n, p = self.dim, self.nparam
        s, c = np.sin(th), np.cos(th)
        shape = th.shape[:-1] + (n, p)
        F = np.ones(shape)
        F1 = np.zeros(shape)
        F2 = np.zeros(shape)
        for i in range(n):
            for k in range(p):
                if k < i:
                    F[..., i, k], F1[..., i, k], F2[..., i, k] = s[..., k], c[..., k], -s[..., k]
                elif k == i:
                    F[..., i, k], F1[..., i, k], F2[..., i, k] = c[..., k], -s[..., k], -c[..., k]
        return F, F1, F2

    def _rotate(self, arr, axis=-1):
        if self.rotation is None:
            return arr
        return np.moveaxis(np.tensordot(self.rotation, np.moveaxis(arr, axis, 0), axes=(1, 0)), 0, axis)

    def u(self, theta) -> np.ndarray:
        F, _, _ = self._factors(theta)
        return self._rotate(F.prod(axis=-1))

    def jacobian(self, theta) -> np.ndarray:
        """``du_i / dtheta_k``, shape (..., dim, dim-1)."""
        F, F1, _ = self._factors(theta)
        p = self.nparam
        out = np.empty(F.shape)
        for k in range(p):
            G = F.copy()
            G[..., k] = F1[..., k]
            out[..., k] = G.prod(axis=-1)
        return self._rotate(out, axis=-2)

    def second_derivatives(self, theta) -> np.ndarray:
        """``d^2 u_i / dtheta_k dtheta_l``, shape (..., dim, dim-1, dim-1)."""
        F, F1, F2 = self._factors(theta)
        p = self.nparam
        out = np.empty(F.shape[:-1] + (p, p))
        for k in range(p):
            for l in range(k, p):
                G = F.copy()
                if k == l:
                    G[..., k] = F2[..., k]
                else:
                    G[..., k] = F1[..., k]
                    G[..., l] = F1[..., l]
                out[..., k, l] = out[..., l, k] = G.prod(axis=-1)
        return self._rotate(out, axis=-3)

    def metric(self, theta) -> np.ndarray:
        J = self.jacobian(theta)
        return np.einsum("...ik,...il->...kl", J, J)

    def metric_closed_form(self, theta) -> np.ndarray:
        """Diagonal metric ``g_00 = 1``, ``g_ii = prod_{j<i} sin^2 theta_j``."""
        th = np.asarray(theta, dtype=float)
        s2 = np.sin(th) ** 2
        diag = np.concatenate([np.ones(th.shape[:-1] + (1,)), np.cumprod(s2, axis=-1)[..., :-1]], axis=-1)
        return diag[..., :, None] * np.eye(self.nparam)

    def christoffel(self, theta) -> np.ndarray:
        """Second-kind symbols ``Gamma^m_ij``, shape (..., m, i, j)."""
        J = self.jacobian(theta)
        H = self.second_derivatives(theta)
        first = np.einsum("...kl,...kij->...lij", J, H)
        ginv = np.linalg.inv(self.metric(theta))
        return np.einsum("...ml,...lij->...mij", ginv, first)

    def theta_of(self, u) -> np.ndarray:
        """Inverse map (angles of ``u`` in this chart)."""
        u = np.asarray(u, dtype=float)
        if self.rotation is not None:
            u = u @ self.rotation  # R^T u for each row
        n = self.dim
        th = np.empty(u.shape[:-1] + (n - 1,))
        rest = np.linalg.norm(u, axis=-1)
        for i in range(n - 2):
            th[..., i] = np.arccos(np.clip(u[..., i] / np.maximum(rest, 1e-300), -1.0, 1.0))
            rest = np.sqrt(np.maximum(rest**2 - u[..., i] ** 2, 0.0))
        th[..., n - 2] = np.mod(np.arctan2(u[..., n - 1], u[..., n - 2]), 2 * np.pi)
        return th

    def pole_distance(self, u) -> np.ndarray:
        """Smallest ``sin`` among the polar angles of ``u``; zero on a pole."""
        if self.dim == 2:
            return np.ones(np.shape(u)[:-1])
        th = self.theta_of(u)[..., :-1]
        return np.abs(np.sin(th)).min(axis=-1)


def _second_chart(dim):
    """Chart with the polar axis moved from e_0 to e_{dim-1}."""
    R = np.eye(dim)[:, np.r_[dim - 1, 0 : dim - 1]]
    return SphericalChart(dim, rotation=R)


def theta_grid(dim: int, resolution: int, eps: float = POLE_EPS) -> np.ndarray:
    """Uniform product grid on the chart domain (polar angles clamped away from poles)."""
    if dim == 2:
        return (2 * np.pi * np.arange(resolution) / resolution)[:, None]
    axes = [np.linspace(eps, np.pi - eps, resolution)] * (dim - 2)
    axes.append(2 * np.pi * np.arange(resolution) / resolution)
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


# -- fields -----------------------------------------------------------------------------


class PercentileField:
    """Smooth percentile function in ambient coordinates."""

    dim: int

    def value(self, U) -> np.ndarray:
        raise NotImplementedError

    def grad(self, U) -> np.ndarray:
        raise NotImplementedError

    def hess(self, U) -> np.ndarray:
        raise NotImplementedError

    def on_chart(self, chart: SphericalChart, theta):
        """``C``, ``dC/dtheta`` and ``d^2C/dtheta^2`` at the given angles."""
        U = chart.u(theta)
        J = chart.jacobian(theta)
        H = chart.second_derivatives(theta)
        flat = U.reshape(-1, self.dim)
        c = self.value(flat).reshape(U.shape[:-1])
        g = self.grad(flat).reshape(U.shape)
        h = self.hess(flat).reshape(U.shape + (self.dim,))
        dc = np.einsum("...i,...ik->...k", g, J)
        d2c = np.einsum("...k,...kij->...ij", g, H) + np.einsum("...ki,...kl,...lj->...ij", J, h, J)
        return c, dc, d2c


class ConstantField(PercentileField):
    def __init__(self, dim: int, r: float):
        self.dim, self.r = dim, float(r)

    def value(self, U):
        return np.full(np.shape(U)[0], self.r)

    def grad(self, U):
        return np.zeros(np.shape(U))

    def hess(self, U):
        m = np.shape(U)[0]
        return np.zeros((m, self.dim, self.dim))


class GaussianField(PercentileField):
    """``C(u) = u . mean + z sqrt(u^T cov u)``, the exact Gaussian percentile."""

    def __init__(self, mean, cov, pe: float):
        self.mean = np.asarray(mean, dtype=float)
        self.cov = np.asarray(cov, dtype=float)
        self.dim = self.mean.size
        self.pe = pe
        self.z = stats.norm.isf(pe)

    def value(self, U):
        U = np.atleast_2d(U)
        return U @ self.mean + self.z * np.sqrt(np.einsum("ij,jk,ik->i", U, self.cov, U))

    def grad(self, U):
        U = np.atleast_2d(U)
        Su = U @ self.cov
        s = np.sqrt(np.einsum("ij,ij->i", Su, U))
        return self.mean + self.z * Su / s[:, None]

    def hess(self, U):
        U = np.atleast_2d(U)
        Su = U @ self.cov
        s = np.sqrt(np.einsum("ij,ij->i", Su, U))[:, None, None]
        return self.z * (self.cov / s - np.einsum("ij,ik->ijk", Su, Su) / s**3)


class MixtureField(PercentileField):
    """Exact percentile of a Gaussian mixture, derivatives by implicit differentiation.

    ``C(x)`` solves ``G(c, x) = sum_i w_i Phi((c - mu_i . x) / s_i(x)) - (1 - pe) = 0``
    with ``s_i(x) = sqrt(x^T Sigma_i x)``.
    """

    def __init__(self, weights, means, covs, pe: float):
        self.w = np.asarray(weights, dtype=float)
        self.means = np.atleast_2d(np.asarray(means, dtype=float))
        self.covs = np.asarray(covs, dtype=float)
        self.dim = self.means.shape[1]
        self.pe = pe

    @classmethod
    def from_model(cls, model, pe):
        return cls(model.weights, model.means, model.covs, pe)

    def value(self, U):
        U = np.atleast_2d(U)
        r = np.linalg.norm(U, axis=1)
        # C is 1-homogeneous: C(x) = |x| C(x/|x|)
        return r * exact_percentile_mixture(self.w, self.means, self.covs, U / r[:, None], self.pe)

    def _parts(self, U):
        U = np.atleast_2d(U)
        c = self.value(U)
        Su = np.einsum("kab,mb->mka", self.covs, U)  # (M, K, n)
        s = np.sqrt(np.einsum("mka,ma->mk", Su, U))
        ds = Su / s[..., None]
        m = U @ self.means.T
        z = (c[:, None] - m) / s
        a = self.w * stats.norm.pdf(z)
        dz = -self.means[None] / s[..., None] - z[..., None] * ds / s[..., None]
        Gc = (a / s).sum(axis=1)
        Gx = np.einsum("mk,mka->ma", a, dz)
        return U, c, s, ds, z, a, dz, Gc, Gx

    def grad(self, U):
        _, _, _, _, _, _, _, Gc, Gx = self._parts(U)
        return -Gx / Gc[:, None]

    def hess(self, U):
        U, c, s, ds, z, a, dz, Gc, Gx = self._parts(U)
        grad = -Gx / Gc[:, None]
        Gcc = -(a * z / s**2).sum(axis=1)
        Gcx = np.einsum("mk,mka->ma", -a * z / s, dz) - np.einsum("mk,mka->ma", a / s**2, ds)
        d2z = (
            np.einsum("ka,mkb->mkab", self.means, ds)
            + np.einsum("mka,kb->mkab", ds, self.means)
            + 3 * z[..., None, None] * np.einsum("mka,mkb->mkab", ds, ds)
            - z[..., None, None] * self.covs[None]
        ) / (s**2)[..., None, None]
        Gxx = np.einsum("mk,mka,mkb->mab", -a * z, dz, dz) + np.einsum("mk,mkab->mab", a, d2z)
        H = (
            Gxx
            + np.einsum("ma,mb->mab", Gcx, grad)
            + np.einsum("ma,mb->mab", grad, Gcx)
            + Gcc[:, None, None] * np.einsum("ma,mb->mab", grad, grad)
        )
        return -H / Gc[:, None, None]


class SplineField2D(PercentileField):
    """Periodic cubic spline of ``C`` against the polar angle.

    ``smoothing`` is passed to :func:`scipy.interpolate.splrep`; ``None``
    uses the sum of squared standard errors stored in the table (0 if absent).
    """

    dim = 2

    def __init__(self, table: PercentileTable, smoothing: float | None = None):
        if table.dim != 2:
            raise InputError("SplineField2D needs a planar table")
        ang = np.mod(np.arctan2(table.directions[:, 1], table.directions[:, 0]), 2 * np.pi)
        order = np.argsort(ang)
        x, y = ang[order], table.values[order]
        if smoothing is None:
            smoothing = 0.0 if table.stderr is None else float(np.sum(table.stderr**2))
        self.smoothing = smoothing
        xs = np.append(x, x[0] + 2 * np.pi)
        ys = np.append(y, y[0])
        self.tck = interpolate.splrep(xs, ys, k=3, per=1, s=smoothing)

    def theta_derivatives(self, th):
        th = np.mod(th, 2 * np.pi)
        return (interpolate.splev(th, self.tck, der=k) for k in range(3))

    def value(self, U):
        U = np.atleast_2d(U)
        return np.asarray(interpolate.splev(np.mod(np.arctan2(U[:, 1], U[:, 0]), 2 * np.pi), self.tck))

    def grad(self, U):
        U = np.atleast_2d(U)
        r2 = (U**2).sum(axis=1)
        _, c1, _ = self.theta_derivatives(np.arctan2(U[:, 1], U[:, 0]))
        dth = np.column_stack([-U[:, 1], U[:, 0]]) / r2[:, None]
        return c1[:, None] * dth

    def hess(self, U):
        U = np.atleast_2d(U)
        x, y = U[:, 0], U[:, 1]
        r2 = x**2 + y**2
        _, c1, c2 = self.theta_derivatives(np.arctan2(y, x))
        dth = np.column_stack([-y, x]) / r2[:, None]
        h = np.empty((len(x), 2, 2))
        h[:, 0, 0] = 2 * x * y / r2**2
        h[:, 1, 1] = -2 * x * y / r2**2
        h[:, 0, 1] = h[:, 1, 0] = (y**2 - x**2) / r2**2
        return c2[:, None, None] * np.einsum("ma,mb->mab", dth, dth) + c1[:, None, None] * h


class HarmonicField(PercentileField):
    """Least-squares fit by spherical harmonics of degree ``<= degree``.

    Homogeneous monomials of degree ``degree`` and ``degree - 1`` restricted
    to the sphere span exactly the spherical harmonics up to ``degree``, and
    give an ambient polynomial whose derivatives are exact.
    """

    def __init__(self, table: PercentileTable, degree: int = 12, ridge: float = 0.0):
        self.dim = table.dim
        self.degree = int(degree)
        exps = [
            e
            for total in (self.degree, self.degree - 1)
            if total >= 0
            for e in _compositions(total, self.dim)
        ]
        self.exps = np.array(exps, dtype=int)
        B = self._basis(table.directions)
        w = np.ones(len(table)) if table.stderr is None else 1.0 / np.maximum(table.stderr, 1e-12)
        w = w / w.mean()
        A = B * w[:, None]
        col = np.linalg.norm(A, axis=0)
        A = A / col
        rhs = table.values * w
        if ridge > 0:
            A = np.vstack([A, math.sqrt(ridge) * np.eye(A.shape[1])])
            rhs = np.concatenate([rhs, np.zeros(A.shape[1])])
        coef, *_ = np.linalg.lstsq(A, rhs, rcond=1e-12)
        self.coef = coef / col
        self.rms_residual = float(np.sqrt(np.mean((B @ self.coef - table.values) ** 2)))

    def _powers(self, U, shift=0):
        U = np.atleast_2d(U)
        k = np.arange(self.degree + 1)
        base = np.power(U[None, :, :], np.maximum(k - shift, 0)[:, None, None])
        if shift == 1:
            base = base * k[:, None, None]
        elif shift == 2:
            base = base * (k * (k - 1))[:, None, None]
        return base  # (degree+1, M, n)

    def _basis(self, U, d1=None, d2=None):
        P0 = self._powers(U)
        cols = np.ones((np.atleast_2d(U).shape[0], len(self.exps)))
        for i in range(self.dim):
            if d1 is not None and i in (d1, d2):
                order = 2 if d1 == d2 == i else 1
                P = self._powers(U, order)
            else:
                P = P0
            cols = cols * P[self.exps[:, i], :, i].T
        return cols

    def value(self, U):
        return self._basis(U) @ self.coef

    def grad(self, U):
        return np.column_stack([self._basis(U, i) @ self.coef for i in range(self.dim)])

    def hess(self, U):
        U = np.atleast_2d(U)
        H = np.empty((U.shape[0], self.dim, self.dim))
        for i in range(self.dim):
            for j in range(i, self.dim):
                H[:, i, j] = H[:, j, i] = self._basis(U, i, j) @ self.coef
        return H


def _compositions(total, parts):
    for cut in itertools.combinations(range(total + parts - 1), parts - 1):
        prev, out = -1, []
        for c in cut:
            out.append(c - prev - 1)
            prev = c
        out.append(total + parts - 1 - prev - 1)
        yield tuple(out)


def field_from_table(table: PercentileTable, smoothing: float | None = None, degree: int = 12) -> PercentileField:
    """Smooth interpolant of a dense table: periodic spline in 2D, harmonics otherwise."""
    if table.dim == 2:
        return SplineField2D(table, smoothing)
    return HarmonicField(table, degree)


# -- contour evaluation -------------------------------------------------------------------


def _check_regular(chart, theta):
    J = chart.jacobian(theta)
    sv = np.linalg.svd(J, compute_uv=False)
    if np.any(sv.min(axis=-1) < 1e-12):
        raise ChartSingularityError(f"chart metric is singular at theta={np.asarray(theta).tolist()}")


def contour_point(chart: SphericalChart, fld: PercentileField, theta) -> np.ndarray:
    """``b(theta) = C u + J g^{-1} (grad_theta C)^T``."""
    _check_regular(chart, theta)
    U = chart.u(theta)
    J = chart.jacobian(theta)
    g = np.einsum("...ik,...il->...kl", J, J)
    c, dc, _ = fld.on_chart(chart, theta)
    tang = np.einsum("...ik,...k->...i", J, np.linalg.solve(g, dc[..., None])[..., 0])
    return c[..., None] * U + tang


def contour_point_u(fld: PercentileField, U) -> np.ndarray:
    """Chart-free form ``b = C u + (I - u u^T) grad C``, valid at any direction."""
    U = np.atleast_2d(U)
    c = fld.value(U)
    g = fld.grad(U)
    return c[:, None] * U + g - np.einsum("mi,mi->m", g, U)[:, None] * U


def tangency_check(chart: SphericalChart, fld: PercentileField, theta, step: float = 1e-5):
    """Residuals ``|u . b - C|`` and ``|u^T grad_theta b|`` (central differences)."""
    theta = np.asarray(theta, dtype=float)
    u = chart.u(theta)
    b = contour_point(chart, fld, theta)
    c, _, _ = fld.on_chart(chart, theta)
    r1 = abs(float(u @ b - c))
    cols = []
    for k in range(chart.nparam):
        e = np.zeros(chart.nparam)
        e[k] = step
        cols.append((contour_point(chart, fld, theta + e) - contour_point(chart, fld, theta - e)) / (2 * step))
    grad_b = np.column_stack(cols)
    return r1, float(np.linalg.norm(u @ grad_b))


def kappa(chart: SphericalChart, fld: PercentileField, theta, theta_p) -> float:
    """``C(theta) - u(theta) . b(theta')``: the percentile recentred at ``b(theta')``."""
    c, _, _ = fld.on_chart(chart, np.asarray(theta, dtype=float))
    return float(c - chart.u(theta) @ contour_point(chart, fld, theta_p))


def hessian_criterion(chart: SphericalChart, fld: PercentileField, theta, normalized: bool = False):
    """Smallest eigenvalue of ``Hess C + g C`` at ``theta``.

    ``Hess_ij = d^2C/dtheta_i dtheta_j - Gamma^m_ij dC/dtheta_m``.  With
    ``normalized`` the eigenvalues of ``g^{-1}(Hess C + g C)`` are used
    instead; they do not depend on the chart (principal radii of curvature).
    """
    theta = np.asarray(theta, dtype=float)
    _check_regular(chart, theta)
    A = _covariant_matrix(chart, fld, theta)
    if normalized:
        g = chart.metric(theta)
        L = np.linalg.cholesky(g)
        Li = np.linalg.inv(L)
        A = Li @ A @ np.swapaxes(Li, -1, -2)
    ev = np.linalg.eigvalsh(A)
    return ev[..., 0] if ev.ndim > 1 else float(ev[0])


def _covariant_matrix(chart, fld, theta):
    c, dc, d2c = fld.on_chart(chart, theta)
    gamma = chart.christoffel(theta)
    g = chart.metric(theta)
    hess = d2c - np.einsum("...mij,...m->...ij", gamma, dc)
    return hess + g * c[..., None, None]


def reflection_residuals(chart: SphericalChart, fld: PercentileField, theta, origin, step: float = 1e-5):
    """Equidistance and orthogonality residuals of ``b`` against the reflection surface.

    ``s(theta) = o + 2 (C - u . o) u``.  Returns
    ``(| |b - o|^2 - |s - b|^2 |, |(s - b)^T ds/dtheta|)``.
    """
    o = np.asarray(origin, dtype=float)
    theta = np.asarray(theta, dtype=float)

    def s_of(t):
        c, _, _ = fld.on_chart(chart, t)
        u = chart.u(t)
        return o + 2 * (c - u @ o) * u

    b = contour_point(chart, fld, theta)
    s = s_of(theta)
    ds = np.column_stack(
        [(s_of(theta + step * e) - s_of(theta - step * e)) / (2 * step) for e in np.eye(chart.nparam)]
    )
    eq = abs(float((b - o) @ (b - o) - (s - b) @ (s - b)))
    return eq, float(np.linalg.norm((s - b) @ ds))


def _resolution(dim, resolution):
    resolution = resolution or (720 if dim == 2 else 90)
    if resolution < 90:
        raise InputError(f"grid resolution must be >= 90 per angle, got {resolution}")
    return resolution


@dataclass(eq=False)
class ExistenceReport:
    """Outcome of the kappa scan and the Hessian criterion on one grid.

    ``scan_verdict`` comes from the kappa minimum alone.  ``verdict`` also
    takes the Hessian criterion into account: a negative eigenvalue rules
    existence out, a non-negative one is inconclusive.
    """

    scan_verdict: str
    kappa_min: float
    argmin: tuple
    hessian_min: float
    hessian_argmin: np.ndarray
    resolution: int
    tol: float
    hessian_tol: float
    scale: float

    @property
    def hessian_fails(self) -> bool:
        return self.hessian_min < -self.hessian_tol

    @property
    def verdict(self) -> str:
        if self.hessian_fails and self.scan_verdict == "admits":
            return "fails"
        return self.scan_verdict

    @property
    def consistent(self) -> bool:
        """False when the Hessian criterion fails while the kappa scan admits."""
        return not (self.hessian_fails and self.scan_verdict == "admits")

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "scan_verdict": self.scan_verdict,
            "kappa_min": self.kappa_min,
            "argmin_theta": self.argmin[0],
            "argmin_theta_prime": self.argmin[1],
            "hessian_min": self.hessian_min,
            "hessian_argmin_theta": self.hessian_argmin,
            "hessian_tol": self.hessian_tol,
            "resolution": self.resolution,
            "tol": self.tol,
            "scale": self.scale,
            "consistent": self.consistent,
        }


def _kappa_min(C, U, B, chunk=512):
    best, arg = np.inf, (0, 0)
    # rows in fixed order so ties resolve to the first occurrence
    for s in range(0, len(U), chunk):
        K = C[s : s + chunk, None] - U[s : s + chunk] @ B.T
        i, j = np.unravel_index(int(np.argmin(K)), K.shape)
        if K[i, j] < best:
            best, arg = float(K[i, j]), (s + int(i), int(j))
    return best, arg


def hessian_scan(chart: SphericalChart | None, fld: PercentileField, resolution: int | None = None):
    """Minimum of the criterion over the grid, with its location.

    In 2D this is ``min C + C''``.  In higher dimensions the chart-invariant
    normalised eigenvalues are used and grid points closer to a pole of
    ``chart`` than to one of the rotated second chart are evaluated there.
    """
    chart = chart or SphericalChart(fld.dim)
    resolution = _resolution(fld.dim, resolution)
    theta = theta_grid(fld.dim, resolution)
    if fld.dim == 2:
        lam = np.atleast_1d(hessian_criterion(chart, fld, theta))
    else:
        U = chart.u(theta)
        R = np.eye(fld.dim) if chart.rotation is None else chart.rotation
        other = SphericalChart(fld.dim, R @ _second_chart(fld.dim).rotation)
        use_other = chart.pole_distance(U) < other.pole_distance(U)
        lam = np.empty(len(U))
        lam[~use_other] = hessian_criterion(chart, fld, theta[~use_other], normalized=True)
        if use_other.any():
            lam[use_other] = hessian_criterion(other, fld, other.theta_of(U[use_other]), normalized=True)
    k = int(np.argmin(lam))
    return float(lam[k]), theta[k]


def existence_scan(
    chart: SphericalChart | None,
    fld: PercentileField,
    resolution: int | None = None,
    tol: float = 1e-6,
    hessian_tol: float = 1e-9,
) -> ExistenceReport:
    """Minimum of ``kappa`` over a product grid of ``(theta, theta')`` plus the Hessian criterion.

    ``resolution`` is the number of points per angle (default 720 on the
    circle and 90 per angle otherwise; at least 90).  The diagonal
    ``theta = theta'`` is on the grid, so ``kappa_min <= 0`` up to rounding.
    Contour points are computed chart-free, so clamped polar rows are exact.

    Scan verdict, with ``scale = max |C|`` on the grid:
    ``admits`` if ``kappa_min >= -1e-9 scale``, ``fails`` if
    ``kappa_min < -tol scale``, ``marginal`` in between.
    """
    chart = chart or SphericalChart(fld.dim)
    resolution = _resolution(fld.dim, resolution)
    theta = theta_grid(fld.dim, resolution)
    U = chart.u(theta)
    C = fld.value(U)
    scale = float(np.abs(C).max())
    kmin, (i, j) = _kappa_min(C, U, contour_point_u(fld, U))
    if kmin >= -1e-9 * scale:
        verdict = "admits"
    elif kmin >= -tol * scale:
        verdict = "marginal"
    else:
        verdict = "fails"
    hmin, harg = hessian_scan(chart, fld, resolution)
    return ExistenceReport(
        scan_verdict=verdict,
        kappa_min=kmin,
        argmin=(theta[i], theta[j]),
        hessian_min=hmin,
        hessian_argmin=harg,
        resolution=resolution,
        tol=tol,
        hessian_tol=hessian_tol,
        scale=scale,
    )


@dataclass(eq=False)
class ParametricContour:
    theta: np.ndarray
    points: np.ndarray
    report: ExistenceReport | None = field(default=None)

    @property
    def verdict(self):
        return None if self.report is None else self.report.verdict

    def csv(self) -> str:
        from .io import format_csv

        p = self.theta.shape[1]
        header = [f"theta_{i}" for i in range(p)] + [f"b_{i + 1}" for i in range(self.points.shape[1])]
        return format_csv(header, np.column_stack([self.theta, self.points]))


def parametric_contour(
    fld: PercentileField, resolution: int | None = None, chart: SphericalChart | None = None, scan: bool = True
) -> ParametricContour:
    """``b`` on the chart grid, optionally with the existence report."""
    chart = chart or SphericalChart(fld.dim)
    resolution = _resolution(fld.dim, resolution)
    theta = theta_grid(fld.dim, resolution)
    rep = existence_scan(chart, fld, resolution) if scan else None
    return ParametricContour(theta=theta, points=contour_point_u(fld, chart.u(theta)), report=rep)

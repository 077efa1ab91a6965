import numpy as np
import pytest
from scipy import stats

from envcontour.analytic import (
    ConstantField,
    GaussianField,
    HarmonicField,
    MixtureField,
    SphericalChart,
    SplineField2D,
    contour_point,
    contour_point_u,
    existence_scan,
    hessian_criterion,
    kappa,
    parametric_contour,
    reflection_residuals,
    tangency_check,
    theta_grid,
)
from envcontour.errors import ChartSingularityError, InputError
from envcontour.geometry import fibonacci_directions_3d, grid_directions_2d, sample_directions_uniform
from envcontour.model import mixture_fig7, sample
from envcontour.percentile import estimate_table, exact_percentile_gaussian, gaussian_table

COV7 = 0.16 * np.array([[1.0, 0.5], [0.5, 1.0]])
COV3 = np.array([[1.0, 0.3, 0.1], [0.3, 2.0, 0.2], [0.1, 0.2, 0.5]])


def _random_theta(rng, dim, k):
    th = rng.uniform(0.05, np.pi - 0.05, size=(k, dim - 1))
    th[:, -1] = rng.uniform(0, 2 * np.pi, size=k)
    return th


def _fd_jacobian(f, x, h=1e-6):
    cols = [(f(x + h * e) - f(x - h * e)) / (2 * h) for e in np.eye(len(x))]
    return np.stack(cols, axis=-1)


@pytest.mark.parametrize("dim", [2, 3, 4])
def test_chart_identities(dim, rng):
    ch = SphericalChart(dim)
    th = _random_theta(rng, dim, 1000)
    U = ch.u(th)
    assert np.allclose(np.linalg.norm(U, axis=1), 1, atol=1e-14)
    J = ch.jacobian(th)
    assert np.linalg.svd(J, compute_uv=False).min() > 1e-8
    g = ch.metric(th)
    assert np.abs(g - ch.metric_closed_form(th)).max() < 1e-12
    P = np.einsum("mi,mj->mij", U, U) + np.einsum("mik,mkl,mjl->mij", J, np.linalg.inv(g), J)
    assert np.abs(P - np.eye(dim)).max() < 1e-10


def test_chart_derivatives_match_finite_differences(rng):
    ch = SphericalChart(4)
    for th in _random_theta(rng, 4, 5):
        assert np.allclose(_fd_jacobian(ch.u, th), ch.jacobian(th), atol=1e-8)
        assert np.allclose(_fd_jacobian(ch.jacobian, th), ch.second_derivatives(th), atol=1e-8)


def test_christoffel_closed_form_s2():
    # on S^2: Gamma^0_11 = -sin cos, Gamma^1_01 = cot
    ch = SphericalChart(3)
    t0 = 0.7
    G = ch.christoffel(np.array([t0, 1.3]))
    assert G[0, 1, 1] == pytest.approx(-np.sin(t0) * np.cos(t0))
    assert G[1, 0, 1] == pytest.approx(np.cos(t0) / np.sin(t0))
    assert G[1, 1, 0] == pytest.approx(G[1, 0, 1])
    assert abs(G[0, 0, 0]) < 1e-14


def test_rotated_chart_inverse(rng):
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    ch = SphericalChart(3, rotation=q)
    th = _random_theta(rng, 3, 50)
    assert np.allclose(ch.theta_of(ch.u(th)), th, atol=1e-10)
    assert np.allclose(ch.metric(th), SphericalChart(3).metric(th), atol=1e-12)


def test_theta_grid():
    g = theta_grid(3, 90)
    assert g.shape == (8100, 2)
    assert g[:, 0].min() == pytest.approx(1e-3) and g[:, 0].max() == pytest.approx(np.pi - 1e-3)


def test_constant_field_circle_and_sphere(rng):
    ch2 = SphericalChart(2)
    f = ConstantField(2, 2.5)
    th = np.array([0.8])
    assert np.allclose(contour_point(ch2, f, th), 2.5 * ch2.u(th))
    ch3 = SphericalChart(3)
    th3 = _random_theta(rng, 3, 10)
    assert np.allclose(contour_point(ch3, ConstantField(3, 1.0), th3), ch3.u(th3))
    assert tangency_check(ch2, f, th) == pytest.approx((0.0, 0.0), abs=1e-9)


def test_pole_is_singular():
    with pytest.raises(ChartSingularityError):
        contour_point(SphericalChart(3), ConstantField(3, 1.0), np.array([0.0, 1.0]))
    with pytest.raises(ChartSingularityError):
        hessian_criterion(SphericalChart(3), ConstantField(3, 1.0), np.array([np.pi, 1.0]))


def test_gaussian_contour_point_example():
    f = GaussianField([0, 0], COV7, 0.15)
    b = contour_point(SphericalChart(2), f, np.array([0.0]))
    z = stats.norm.isf(0.15)
    assert np.allclose(b, z * np.array([0.16, 0.08]) / 0.4, atol=1e-12)
    assert np.allclose(b, [0.4146, 0.2073], atol=1e-4)


def test_gaussian_field_derivatives(rng):
    f = GaussianField([0.3, -0.2, 1.0], COV3, 0.1)
    U = sample_directions_uniform(20, 3, 2)
    assert np.allclose(f.value(U), exact_percentile_gaussian(f.mean, f.cov, U, 0.1))
    for u in U:
        g = _fd_jacobian(lambda x: f.value(x[None])[0], u)
        assert np.allclose(g, f.grad(u[None])[0], rtol=1e-6, atol=1e-8)
        H = _fd_jacobian(lambda x: f.grad(x[None])[0], u)
        assert np.allclose(H, f.hess(u[None])[0], rtol=1e-5, atol=1e-7)


def test_mixture_field_derivatives():
    m = mixture_fig7()
    f = MixtureField.from_model(m, 0.15)
    for ang in np.linspace(0.1, 6.0, 7):
        u = np.array([np.cos(ang), np.sin(ang)])
        g = _fd_jacobian(lambda x: f.value(x[None])[0], u)
        assert np.allclose(g, f.grad(u[None])[0], atol=1e-7)
        H = _fd_jacobian(lambda x: f.grad(x[None])[0], u)
        assert np.allclose(H, f.hess(u[None])[0], atol=1e-6)


def test_chart_free_contour_point_agrees(rng):
    f = GaussianField([0.3, -0.2, 1.0], COV3, 0.1)
    ch = SphericalChart(3)
    th = _random_theta(rng, 3, 40)
    assert np.allclose(contour_point(ch, f, th), contour_point_u(f, ch.u(th)), atol=1e-12)
    U = ch.u(th)
    Su = U @ COV3
    closed = f.mean + f.z * Su / np.sqrt(np.einsum("ij,ij->i", Su, U))[:, None]
    assert np.allclose(contour_point_u(f, U), closed, atol=1e-12)


@pytest.mark.parametrize("dim", [2, 3])
def test_tangency_closed_form(dim, rng):
    f = GaussianField(np.zeros(2), COV7, 0.15) if dim == 2 else GaussianField([0.3, -0.2, 1.0], COV3, 0.1)
    ch = SphericalChart(dim)
    for th in _random_theta(rng, dim, 100):
        r1, r2 = tangency_check(ch, f, th)
        assert r1 < 1e-8 and r2 < 1e-6


def test_reflection_conditions(rng):
    f = GaussianField([0.3, -0.2, 1.0], COV3, 0.1)
    ch = SphericalChart(3)
    o = np.array([0.25, -0.1, 0.9])
    for th in _random_theta(rng, 3, 20):
        eq, orth = reflection_residuals(ch, f, th, o)
        assert eq < 1e-8 and orth < 1e-6


def test_kappa_examples():
    ch = SphericalChart(2)
    f = ConstantField(2, 1.7)
    for a, b in [(0.2, 0.2), (0.3, 1.9), (5.0, 0.1)]:
        assert kappa(ch, f, [a], [b]) == pytest.approx(1.7 * (1 - np.cos(a - b)), abs=1e-14)
    g = GaussianField([0, 0], COV7, 0.15)
    assert kappa(ch, g, [1.1], [1.1]) == pytest.approx(0.0, abs=1e-15)


def test_scan_gaussian_admits():
    for f in (ConstantField(2, 1.0), GaussianField([0, 0], COV7, 0.15), GaussianField([0.3, -0.2, 1.0], COV3, 0.1)):
        rep = existence_scan(None, f)
        assert rep.verdict == "admits" and rep.consistent
        assert rep.kappa_min >= -1e-9 and rep.hessian_min >= -1e-9


def test_scan_mixture_fails():
    f = MixtureField.from_model(mixture_fig7(), 0.15)
    rep = existence_scan(SphericalChart(2), f, 360)
    assert rep.verdict == "fails" and rep.hessian_min < 0 and rep.consistent
    k = kappa(SphericalChart(2), f, rep.argmin[0], rep.argmin[1])
    assert k == pytest.approx(rep.kappa_min, abs=1e-12)


def test_scan_mixture_interpolated_fails():
    m = mixture_fig7()
    t = estimate_table(sample(m, 10**6, 3), grid_directions_2d(720), 0.15)
    f = SplineField2D(t)
    rep = existence_scan(None, f)
    assert rep.kappa_min < 0 and rep.verdict == "fails"
    assert rep.hessian_min < 0


def test_scan_resolution_floor():
    with pytest.raises(InputError):
        existence_scan(None, ConstantField(2, 1.0), 45)


def test_hessian_circle_and_ellipse():
    ch = SphericalChart(2)
    th = theta_grid(2, 720)
    assert np.allclose(hessian_criterion(ch, ConstantField(2, 0.8), th), 0.8)
    lam = hessian_criterion(ch, GaussianField([0, 0], COV7, 0.15), th)
    assert lam.min() > 0
    # 2D: C + C'' from finite differences of the closed form
    f = GaussianField([0, 0], COV7, 0.15)
    t0, h = 0.9, 1e-4
    c = [f.value(ch.u(np.array([t0 + k * h])).reshape(1, 2))[0] for k in (-1, 0, 1)]
    fd = c[1] + (c[0] - 2 * c[1] + c[2]) / h**2
    assert hessian_criterion(ch, f, np.array([t0])) == pytest.approx(fd, rel=1e-5)


def test_hessian_chart_invariance(rng):
    f = GaussianField([0.3, -0.2, 1.0], COV3, 0.1)
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    a, b = SphericalChart(3), SphericalChart(3, rotation=q)
    for th in _random_theta(rng, 3, 10):
        u = a.u(th)
        la = hessian_criterion(a, f, th, normalized=True)
        lb = hessian_criterion(b, f, b.theta_of(u), normalized=True)
        assert la == pytest.approx(lb, rel=1e-8)


def test_spline_field_accuracy_and_tangency(rng):
    U = grid_directions_2d(720)
    f0 = GaussianField([0, 0], COV7, 0.15)
    f = SplineField2D(gaussian_table([0, 0], COV7, U, 0.15))
    th = rng.uniform(0, 2 * np.pi, 100)
    V = np.column_stack([np.cos(th), np.sin(th)])
    assert np.abs(f.value(V) - f0.value(V)).max() < 1e-8
    ch = SphericalChart(2)
    for t in th:
        g_fd = (f.value(ch.u(np.array([t + 1e-5]))[None]) - f.value(ch.u(np.array([t - 1e-5]))[None])) / 2e-5
        g = f.on_chart(ch, np.array([t]))[1]
        assert g == pytest.approx(g_fd[0], rel=1e-4, abs=1e-8)
        r1, r2 = tangency_check(ch, f, np.array([t]))
        assert r1 < 1e-3 and r2 < 1e-3


def test_spline_field_on_noisy_table_tangency(rng):
    m = mixture_fig7()
    t = estimate_table(sample(m, 10**5, 1), grid_directions_2d(720), 0.15)
    f = SplineField2D(t)
    ch = SphericalChart(2)
    for th in rng.uniform(0, 2 * np.pi, 100):
        r1, r2 = tangency_check(ch, f, np.array([th]))
        assert r1 < 1e-3 and r2 < 1e-3


def test_harmonic_field_gradient_and_fit(rng):
    f0 = GaussianField([0.3, -0.2, 1.0], COV3, 0.1)
    U = fibonacci_directions_3d(1500)
    f = HarmonicField(gaussian_table(f0.mean, f0.cov, U, 0.1), degree=12)
    T = sample_directions_uniform(100, 3, 5)
    assert np.abs(f.value(T) - f0.value(T)).max() < 1e-3
    ch = SphericalChart(3)
    for th in _random_theta(rng, 3, 100):
        g = f.on_chart(ch, th)[1]
        g_fd = _fd_jacobian(lambda t: f.value(ch.u(t)[None])[0], th, h=1e-5)
        assert np.allclose(g, g_fd, rtol=1e-4, atol=1e-7)
    rep = existence_scan(None, f)
    assert rep.verdict == "admits"


def test_parametric_contour_export():
    pc = parametric_contour(GaussianField([0, 0], COV7, 0.15), 180)
    assert pc.points.shape == (180, 2) and pc.verdict == "admits"
    lines = pc.csv().splitlines()
    assert lines[0] == "theta_0,b_1,b_2" and len(lines) == 181
    d = pc.report.to_dict()
    assert set(d) >= {"verdict", "kappa_min", "argmin_theta", "argmin_theta_prime", "hessian_min"}

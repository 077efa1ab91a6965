"""Acceptance criteria, one test each.  A PASS/FAIL line per criterion is printed in the terminal summary."""

import json

import numpy as np
import pytest
from scipy import stats

from envcontour.analytic import (
    GaussianField,
    MixtureField,
    SphericalChart,
    contour_point,
    existence_scan,
    tangency_check,
    theta_grid,
)
from envcontour.cli import load_config, make_field, reproduce_fig6, reproduce_fig7, reproduce_fig9
from envcontour.contour import (
    contour_from_table,
    corrected_contour,
    exceedance_from_samples,
    hausdorff,
    validate_contour,
    voronoi_contour,
)
from envcontour.errors import UnboundedCellError
from envcontour.geometry import (
    check_positive_span,
    fibonacci_directions_3d,
    grid_directions_2d,
    reflection_set,
    sample_directions_uniform,
    voronoi_cell,
)
from envcontour.model import MultivariateNormal, ellipse_fig7, mixture_fig7, sample
from envcontour.percentile import PercentileTable, estimate_table

from conftest import record
from oracles import canonical, halfspace_vertices

pytestmark = pytest.mark.slow

COV7 = 0.16 * np.array([[1.0, 0.5], [0.5, 1.0]])
COV3 = np.array([[1.0, 0.3, 0.1], [0.3, 2.0, 0.2], [0.1, 0.2, 0.5]])


def test_c1_gaussian_ball():
    r2 = stats.norm.isf(0.05)
    res2 = voronoi_contour(MultivariateNormal(np.zeros(2), np.eye(2)), 0.05, grid_directions_2d(360), 10**6, 1)
    dev2 = np.abs(np.linalg.norm(res2.cell.vertices, axis=1) / r2 - 1).max()
    r3 = stats.norm.isf(0.1)
    res3 = voronoi_contour(MultivariateNormal(np.zeros(3), np.eye(3)), 0.1, fibonacci_directions_3d(360), 10**6, 1)
    dev3 = np.abs(np.linalg.norm(res3.cell.vertices, axis=1) / r3 - 1).max()
    ok = dev2 <= 0.02 and dev3 <= 0.03
    record("c1 gaussian ball", ok, f"2D max rel dev {dev2:.4f} (<=0.02), 3D max rel dev {dev3:.4f} (<=0.03)")
    assert ok


def test_c2_ellipse_hausdorff():
    res = voronoi_contour(ellipse_fig7(), 0.15, grid_directions_2d(720), 10**6, 1)
    ch = SphericalChart(2)
    b = contour_point(ch, GaussianField([0, 0], COV7, 0.15), theta_grid(2, 7200))
    diam = res.cell.diameter
    dist = hausdorff(b, res.cell.boundary_points(diam / 2000))
    ok = dist < 0.02 * diam
    record("c2 ellipse hausdorff", ok, f"hausdorff {dist:.4e} vs 2% of diameter {0.02 * diam:.4e}")
    assert ok


def test_c3_nested_monotonicity():
    U2 = grid_directions_2d(360)
    sub = np.arange(0, 360, 4)
    worst, passed = -np.inf, 0
    for seed in range(20):
        s = sample(mixture_fig7(), 50_000, seed)
        t2 = estimate_table(s, U2, 0.15)
        t1 = PercentileTable(pe=0.15, directions=U2[sub], values=t2.values[sub])
        cell2 = contour_from_table(t2, "median", s)[0]
        excess = (cell2.vertices @ t1.directions.T - t1.values).max()
        worst = max(worst, excess)
        passed += excess <= 1e-9
    ok = passed == 20
    record("c3 nested monotonicity", ok, f"{passed}/20 trials, worst constraint excess {worst:.2e} (<=1e-9)")
    assert ok


def test_c4_bruteforce_equivalence():
    rng = np.random.default_rng(4)
    matched, worst, k = 0, 0.0, 0
    while k < 50:
        d = 2 + k % 2
        M = int(rng.integers(d + 2, 26))
        U = sample_directions_uniform(M, d, int(rng.integers(1 << 30)))
        try:
            check_positive_span(U)
        except UnboundedCellError:
            continue
        C = rng.uniform(0.5, 2.0, M)
        o = rng.normal(scale=0.05, size=d)
        table = PercentileTable(pe=0.1, directions=U, values=C)
        got = canonical(voronoi_cell(o, reflection_set(table, o)).vertices)
        ref = halfspace_vertices(U, C)
        if got.shape == ref.shape:
            err = np.abs(got - ref).max()
            worst = max(worst, err)
            matched += err <= 1e-8
        k += 1
    ok = matched == 50
    record("c4 brute-force equivalence", ok, f"{matched}/50 instances, max vertex error {worst:.2e} (<=1e-8)")
    assert ok


def test_c5_corrected_mixture_validity():
    m = mixture_fig7()
    res = voronoi_contour(m, 0.15, grid_directions_2d(720), 10**6, 1)
    corr = corrected_contour(res)
    val = validate_contour(corr, res.table)
    contains = bool(corr.contains(res.cell.vertices).all()) and corr.diameter > res.cell.diameter
    # exceedance audited on an independent sample
    p, se = exceedance_from_samples(corr.normals, corr.offsets, sample(m, 10**6, 12345))
    over = int((p > 0.15 + 3 * se).sum())
    ok = (res.status == "invalid" and len(res.connectivity.offending) >= 1 and val.max_gap <= 1e-6
          and contains and over == 0)
    record(
        "c5 corrected mixture validity", ok,
        f"status {res.status}, {len(res.connectivity.offending)} disconnected, corrected max gap {val.max_gap:.2e}, "
        f"max exceedance {p.max():.4f}, {over}/{len(p)} facets above 0.15+3SE",
    )
    assert ok


def test_c6_existence_consistency():
    lines, ok = [], True
    gauss = [GaussianField([0, 0], np.eye(2), 0.05), GaussianField([0, 0], COV7, 0.15),
             GaussianField([0.3, -0.2, 1.0], COV3, 0.1), GaussianField(np.zeros(3), np.eye(3), 0.1)]
    for f in gauss:
        rep = existence_scan(None, f)
        good = rep.scan_verdict == "admits" and rep.hessian_min >= -1e-9
        ok &= good
        lines.append(f"gaussian{f.dim}d {rep.scan_verdict}/{rep.hessian_min:.3f}")
    mix = MixtureField.from_model(mixture_fig7(), 0.15)
    rep = existence_scan(None, mix)
    ok &= rep.scan_verdict == "fails" and rep.hessian_min < 0
    lines.append(f"mixture {rep.scan_verdict}/{rep.hessian_min:.3f}")
    for name in ("table1_2d.json", "table2_3d.json", "fig7_mixture.json", "gaussian_2d.json"):
        cfg = load_config(name)
        for kind in ("auto", "table"):
            rep = existence_scan(None, make_field(cfg, kind=kind))
            ok &= rep.consistent
            lines.append(f"{name}:{kind} {rep.scan_verdict}/{'H-fail' if rep.hessian_fails else 'H-ok'}")
    record("c6 existence consistency", ok, "; ".join(lines))
    assert ok


def test_c7_tangency_identities():
    rng = np.random.default_rng(7)
    worst1 = worst2 = 0.0
    fields = [GaussianField([0, 0], COV7, 0.15), MixtureField.from_model(mixture_fig7(), 0.15),
              GaussianField([0.3, -0.2, 1.0], COV3, 0.1)]
    for f in fields:
        ch = SphericalChart(f.dim)
        th = rng.uniform(0.05, np.pi - 0.05, size=(100, f.dim - 1))
        th[:, -1] = rng.uniform(0, 2 * np.pi, 100)
        for t in th:
            r1, r2 = tangency_check(ch, f, t)
            worst1, worst2 = max(worst1, r1), max(worst2, r2)
    proj = metric = 0.0
    for dim in (2, 3, 4):
        ch = SphericalChart(dim)
        th = rng.uniform(0.05, np.pi - 0.05, size=(1000, dim - 1))
        th[:, -1] = rng.uniform(0, 2 * np.pi, 1000)
        U, J, g = ch.u(th), ch.jacobian(th), ch.metric(th)
        P = np.einsum("mi,mj->mij", U, U) + np.einsum("mik,mkl,mjl->mij", J, np.linalg.inv(g), J)
        proj = max(proj, np.abs(P - np.eye(dim)).max())
        metric = max(metric, np.abs(g - ch.metric_closed_form(th)).max())
    ok = worst1 < 1e-8 and worst2 < 1e-6 and proj < 1e-10 and metric < 1e-12
    record("c7 tangency identities", ok, f"|u.b-C| {worst1:.1e}, |u^T db| {worst2:.1e}, "
           f"projector {proj:.1e}, metric {metric:.1e}")
    assert ok


def test_c8_reproduction_bundles(tmp_path):
    reproduce_fig6(tmp_path)
    reproduce_fig7(tmp_path)
    reproduce_fig9(tmp_path)
    names = {p.name for p in tmp_path.iterdir()}
    fig6 = {"fig6_grid.svg", "fig6_summary.csv"} | {f"fig6_n{n}_M{m}.svg" for n in (10**4, 10**5, 10**6)
                                                     for m in (90, 360, 1440)}
    fig7 = {"fig7.svg", "fig7_summary.csv", "fig7_trend.json"}
    fig9 = {"fig9_simple.obj", "fig9_corrected.obj", "fig9_difference.obj", "fig9_summary.json"}
    missing = sorted((fig6 | fig7 | fig9) - names)
    trend = json.loads((tmp_path / "fig7_trend.json").read_text())
    ok = not missing and trend["gaussian_loops_vanish"] and trend["mixture_loops_persist"]
    record("c8 reproduction bundles", ok, f"missing {missing or 'none'}; loops {trend['loops']}")
    assert ok

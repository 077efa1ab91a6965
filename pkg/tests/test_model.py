import json
import math

import numpy as np
import pytest
from scipy import stats

from envcontour.errors import ConfigError, DegenerateConditionalError, ParameterError
from envcontour.model import (
    ConditionalLink,
    GaussianMixture,
    Hierarchical2D,
    MultivariateNormal,
    Weibull3P,
    conditional_params,
    load_model,
    mixture_fig7,
    model_from_dict,
    model_to_dict,
    sample,
    table1_model,
    table2_model,
    write_samples_csv,
)


def test_weibull_ppf_at_one_minus_inv_e():
    w = Weibull3P(1.0, 1.0, 0.0)
    assert w.ppf(1 - math.exp(-1)) == pytest.approx(1.0, abs=1e-15)


@pytest.mark.parametrize("alpha,beta", [(0.0, 1.0), (1.0, 0.0), (-1.0, 2.0), (1.0, -0.5)])
def test_weibull_rejects_nonpositive(alpha, beta):
    with pytest.raises(ParameterError):
        Weibull3P(alpha, beta, 0.0)


def test_weibull_cdf_ppf_roundtrip():
    w = Weibull3P(2.776, 1.471, 0.8888)
    p = np.linspace(0.01, 0.99, 25)
    assert np.allclose(w.cdf(w.ppf(p)), p, atol=1e-13)
    assert w.cdf(0.5) == 0.0


def test_weibull_sampling_ks():
    m = table1_model()
    h = sample(m, 100_000, 3).points[:, 0]
    w = m.hs
    d = stats.kstest(h, lambda x: w.cdf(x)).statistic
    assert d < 0.01


def test_table1_support():
    pts = sample(table1_model(), 1000, 11).points
    assert pts[:, 0].min() >= 0.8888
    assert np.all(pts[:, 1] > 0)


def test_gaussian_sample_mean():
    pts = sample(MultivariateNormal(np.zeros(2), np.eye(2)), 10**6, 5).points
    assert np.all(np.abs(pts.mean(axis=0)) < 0.005)


def test_sampling_deterministic():
    for m in (table1_model(), table2_model(), mixture_fig7()):
        a = sample(m, 500, 42).points
        b = sample(m, 500, 42).points
        assert a.tobytes() == b.tobytes()
        assert not np.array_equal(a, sample(m, 500, 43).points)


def test_sampleset_readonly_and_tagged():
    s = sample(mixture_fig7(), 10, 1)
    assert s.seed == 1 and s.model_tag == "gaussian_mixture"
    with pytest.raises(ValueError):
        s.points[0, 0] = 1.0


def test_conditional_params_table1():
    p = conditional_params(table1_model(), 1.0)
    assert p.mu_t == pytest.approx(0.1 + 1.489, abs=1e-15)
    assert p.sigma_t == pytest.approx(0.04 + 0.1748 * math.exp(-0.2243))


def test_conditional_params_table2_wind_at_zero():
    p = conditional_params(table2_model(), 0.0)
    assert p.scale_u == pytest.approx(2.58)
    assert p.shape_u == pytest.approx(4.6)


def test_exponential_link_zero_coefficient():
    link = ConditionalLink("exponential", 1.0, 0.0, 5.0)
    assert np.all(link(np.array([0.0, 1.0, 7.5])) == 1.0)


def test_degenerate_conditional_aborts():
    m = Hierarchical2D(
        Weibull3P(1.0, 1.5, 0.0),
        ConditionalLink("power", 0.1, 1.0, 0.5),
        ConditionalLink("exponential", -1.0, 0.1, 0.0),
    )
    with pytest.raises(DegenerateConditionalError):
        conditional_params(m, 1.0)
    with pytest.raises(DegenerateConditionalError):
        sample(m, 10, 0)


def test_hierarchical_factorisation_ks():
    m = table1_model()
    pts = sample(m, 400_000, 9).points
    h0, dh = 3.0, 0.05
    sel = pts[(pts[:, 0] >= h0) & (pts[:, 0] < h0 + dh)]
    p = conditional_params(m, h0 + dh / 2)
    ref = np.exp(np.random.default_rng(1).normal(p.mu_t, p.sigma_t, 20_000))
    assert stats.ks_2samp(sel[:, 1], ref).statistic < 0.05


def test_table2_wind_is_positive_and_3d():
    pts = sample(table2_model(), 2000, 2).points
    assert pts.shape == (2000, 3)
    assert np.all(pts[:, 2] > 0)


def test_mixture_fig7_definition():
    m = mixture_fig7()
    assert np.allclose(m.weights, [0.8, 0.1, 0.1])
    assert np.allclose(m.covs[0], 0.16 * np.eye(2))
    assert np.allclose(m.covs[1:], 0.04 * np.eye(2))
    assert np.allclose(m.mean, [0.0, 0.2])


@pytest.mark.parametrize(
    "kw",
    [
        dict(weights=[0.5, 0.6], means=[[0, 0], [1, 1]], covs=[np.eye(2), np.eye(2)]),
        dict(weights=[-0.1, 1.1], means=[[0, 0], [1, 1]], covs=[np.eye(2), np.eye(2)]),
        dict(weights=[1.0], means=[[0, 0]], covs=[[[1, 2], [2, 1]]]),
    ],
)
def test_mixture_validation(kw):
    with pytest.raises(ParameterError):
        GaussianMixture(**kw)


def test_mvn_rejects_non_pd():
    with pytest.raises(ParameterError):
        MultivariateNormal([0, 0], [[1, 0], [0, -1]])


def test_model_dict_roundtrip(tmp_path):
    for m in (table1_model(), table2_model(d3=1.3), mixture_fig7()):
        d = model_to_dict(m)
        m2 = model_from_dict(json.loads(json.dumps(d)))
        assert model_to_dict(m2) == d
        p = tmp_path / "m.json"
        p.write_text(json.dumps({"model": d}))
        assert model_to_dict(load_model(p)) == d


def test_model_config_errors(tmp_path):
    with pytest.raises(ConfigError, match="kind"):
        model_from_dict({"kind": "banana"})
    with pytest.raises(ConfigError, match="hs"):
        model_from_dict({"kind": "hierarchical2d"})
    bad = tmp_path / "bad.json"
    bad.write_text('{"kind": "multivariate_normal",\n "mean": [0, 0],,}')
    with pytest.raises(ConfigError, match=r"bad.json:2:"):
        load_model(bad)


def test_write_samples_csv(tmp_path):
    s = sample(table1_model(), 5, 0)
    path = tmp_path / "s.csv"
    write_samples_csv(s, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "Hs,Tz"
    assert np.allclose(np.loadtxt(path, delimiter=",", skiprows=1), s.points, rtol=0, atol=0)

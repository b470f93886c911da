import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from pstream import distributions as d
from pstream.errors import InputError, ParameterError, ZeroMassError


def test_gaussian_pdf_cdf_match_scipy():
    g = d.Gaussian1D(1.5, 4.0)
    x = np.linspace(-5, 8, 50)
    assert np.allclose(g.pdf(x), stats.norm(1.5, 2).pdf(x))
    assert np.allclose(g.cdf(x), stats.norm(1.5, 2).cdf(x))
    assert g.moments() == (1.5, 4.0)


def test_gaussian_rejects_negative_variance():
    with pytest.raises(InputError):
        d.Gaussian1D(0.0, -1.0)


def test_mixture_rejects_unnormalized_weights():
    with pytest.raises(InputError):
        d.GaussianMixture([2, 2], [-1, 1], [1, 1])


def test_mixture_pdf_and_moments():
    m = d.GaussianMixture([0.5, 0.5], [-1, 1], [1, 1])
    mean, var = m.moments()
    assert mean == pytest.approx(0.0)
    assert var == pytest.approx(2.0)
    x = np.linspace(-6, 6, 11)
    ref = 0.5 * stats.norm(-1, 1).pdf(x) + 0.5 * stats.norm(1, 1).pdf(x)
    assert np.allclose(m.pdf(x), ref)


def test_point_mass_step_cdf():
    p = d.PointMass(2.0)
    assert p.cdf(1.999) == 0.0
    assert p.cdf(2.0) == 1.0
    assert p.moments() == (2.0, 0.0)


def test_weighted_samples_moments_and_cdf():
    s = d.WeightedSamples([0.0, 1.0, 2.0], [0.25, 0.5, 0.25])
    assert s.moments() == pytest.approx((1.0, 0.5))
    assert s.cdf(0.5) == pytest.approx(0.25)
    assert s.cdf(2.0) == pytest.approx(1.0)


def test_weighted_samples_reject_zero_weights():
    with pytest.raises((ZeroMassError, InputError, ParameterError)):
        d.WeightedSamples([1.0, 2.0], [0.0, 0.0])


def test_kde_binned_matches_exact_kde(rng):
    x = rng.normal(size=20000)
    s = d.WeightedSamples(x)
    grid = np.linspace(-3, 3, 41)
    exact = np.mean(stats.norm.pdf((grid[:, None] - x[None, :]) / s.bandwidth), axis=1) / s.bandwidth
    assert np.max(np.abs(s.pdf(grid) - exact)) < 2e-3


def test_grid_pdf_cdf_reaches_one():
    x = np.linspace(-8, 8, 1025)
    g = d.GridPdf(x[0], x[1] - x[0], stats.norm.pdf(x), normalize=True)
    assert g.cdf(8.0) == pytest.approx(1.0, abs=1e-9)
    assert g.cdf(0.0) == pytest.approx(0.5, abs=1e-6)
    assert g.moments()[1] == pytest.approx(1.0, abs=1e-4)


def test_gaussian_nd_marginal():
    g = d.GaussianND([1, 2, 3], np.diag([1.0, 4.0, 9.0]))
    m = g.marginal(1)
    assert (m.mean, m.var) == (2.0, 4.0)


def test_confidence_region_gaussian_is_central():
    (lo, hi), = d.confidence_region(d.Gaussian1D(0, 1), 0.95)
    assert lo == pytest.approx(-1.959964, abs=1e-3)
    assert hi == pytest.approx(1.959964, abs=1e-3)


def test_confidence_region_bimodal_splits():
    m = d.GaussianMixture([0.5, 0.5], [-10, 10], [1, 1])
    assert len(d.confidence_region(m, 0.9)) == 2


def test_truncate_gaussian_mass_and_shape():
    mass, t = d.truncate(d.Gaussian1D(70, 25), d.Predicate.gt(60))
    assert mass == pytest.approx(stats.norm(70, 5).sf(60))
    assert d.cdf_at(t, 60.0) == pytest.approx(0.0, abs=1e-9)


def test_truncate_below_floor_raises():
    with pytest.raises(ZeroMassError):
        d.truncate(d.Gaussian1D(0, 1), d.Predicate.gt(100))


@pytest.mark.parametrize("dist", [
    d.PointMass(3.0),
    d.Gaussian1D(1.0, 2.0),
    d.GaussianMixture([0.3, 0.7], [0, 5], [1, 2]),
    d.GaussianND([0, 1], [[1, 0.5], [0.5, 2]]),
    d.WeightedSamples([1.0, 2.0, 4.0], [0.2, 0.3, 0.5]),
])
def test_dict_roundtrip(dist):
    assert d.from_dict(d.to_dict(dist)) == dist


def test_from_dict_unknown_kind():
    with pytest.raises(InputError):
        d.from_dict({"kind": "cauchy"})


@settings(max_examples=40, deadline=None)
@given(st.floats(-50, 50), st.floats(0.01, 100), st.floats(-60, 60))
def test_gaussian_cdf_monotone_and_bounded(mu, var, x):
    g = d.Gaussian1D(mu, var)
    c = g.cdf(x)
    assert 0.0 <= c <= 1.0
    assert g.cdf(x + 1.0) >= c


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=2, max_size=20),
       st.lists(st.floats(0.01, 5), min_size=2, max_size=20))
def test_weighted_samples_mean_is_weighted_average(vals, wts):
    n = min(len(vals), len(wts))
    s = d.WeightedSamples.normalized(vals[:n], wts[:n])
    w = np.asarray(wts[:n]) / np.sum(wts[:n])
    assert s.moments()[0] == pytest.approx(float(np.dot(w, vals[:n])), abs=1e-9)
    assert math.isclose(float(np.sum(s.weights)), 1.0, abs_tol=1e-12)

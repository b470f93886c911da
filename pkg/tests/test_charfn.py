import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pstream import charfn as cf
from pstream import distributions as d
from pstream import fitting
from pstream.errors import CoverageError, ParameterError


def test_gaussian_cf_values():
    g = cf.cf_of(d.Gaussian1D(1.0, 4.0))
    t = np.array([0.0, 0.3, 1.0])
    assert np.allclose(g(t), np.exp(1j * t - 2.0 * t * t))


def test_mixture_cf_is_weighted_sum():
    m = d.GaussianMixture([0.2, 0.8], [-1, 2], [0.5, 1.5])
    t = np.linspace(-3, 3, 13)
    ref = 0.2 * np.exp(-1j * t - 0.25 * t * t) + 0.8 * np.exp(2j * t - 0.75 * t * t)
    assert np.allclose(cf.evaluate(cf.cf_of(m), t), ref)


def test_product_folds_gaussians_and_points():
    out = cf.cf_product([cf.cf_of(d.Gaussian1D(1, 2)), cf.cf_of(d.PointMass(3.0)), cf.cf_of(d.Gaussian1D(-2, 1))])
    assert isinstance(out, cf.GaussianCF)
    assert (out.mean, out.var) == pytest.approx((2.0, 3.0))


def test_scale_and_shift_moments():
    base = cf.cf_of(d.GaussianMixture([0.5, 0.5], [0, 2], [1, 1]))
    m, v = cf.cf_moments(cf.cf_shift(4.0, cf.cf_scale(-2.0, base)))
    assert m == pytest.approx(4.0 - 2.0)
    assert v == pytest.approx(4.0 * 2.0)


def test_bernoulli_thin_mass_at_zero():
    thin = cf.bernoulli_thin(0.3, cf.cf_of(d.PointMass(5.0)))
    law = cf.cf_invert_lattice(thin)
    probs = dict(zip(np.round(law.values, 9), law.weights))
    assert probs[0.0] == pytest.approx(0.7)
    assert probs[5.0] == pytest.approx(0.3)


def test_invert_gaussian_mixture_tv(rng):
    m = d.GaussianMixture([0.4, 0.6], [-2, 3], [0.5, 2.0])
    g = cf.cf_invert(cf.cf_of(m))
    assert fitting.variance_distance(g, m) < 1e-3
    assert g.cdf(np.inf) == pytest.approx(1.0, abs=1e-9)


def test_invert_rejects_narrow_grid():
    c = cf.cf_of(d.Gaussian1D(0, 1))
    with pytest.raises(CoverageError):
        cf.cf_invert(c, cf.GridSpec(256, 0.0, 1.0))


def test_grid_spec_needs_power_of_two():
    with pytest.raises(ParameterError):
        cf.GridSpec(1000, 0.0, 1.0)


def test_lattice_inversion_matches_enumeration():
    weights = [1.0, 2.5, 4.0]
    probs = [0.3, 0.6, 0.9]
    c = cf.cf_product([cf.bernoulli_thin(p, cf.cf_of(d.PointMass(w))) for p, w in zip(probs, weights)])
    law = cf.cf_invert_lattice(c)
    got = dict(zip(np.round(law.values, 9), law.weights))
    for bits in itertools.product([0, 1], repeat=3):
        total = round(sum(b * w for b, w in zip(bits, weights)), 9)
        p = np.prod([pi if b else 1 - pi for b, pi in zip(bits, probs)])
        assert got[total] == pytest.approx(p, abs=1e-12)


def test_mixed_inversion_splits_atom_from_density():
    # 0.4 chance of contributing nothing, 0.6 chance of a N(10, 1) weight.
    c = cf.bernoulli_thin(0.6, cf.cf_of(d.Gaussian1D(10, 1)))
    law = cf.cf_invert_mixed(c)
    assert law.atom_mass == pytest.approx(0.4)
    assert law.sf(-0.5) == pytest.approx(1.0, abs=1e-6)
    assert law.sf(10.0) == pytest.approx(0.3, abs=1e-4)
    assert law.sf(5.0) == pytest.approx(0.6, abs=1e-4)


def test_fit_recovers_two_component_mixture():
    true = d.GaussianMixture([0.3, 0.7], [-2.0, 1.0], [0.5, 1.0])
    fit = cf.cf_fit_gmm(cf.cf_of(true), 2)
    assert fitting.variance_distance(fit, true) < 5e-3
    assert fit.moments() == pytest.approx(true.moments(), abs=1e-3)


def test_fit_single_component_is_moment_match():
    c = cf.cf_product([cf.cf_of(d.GaussianMixture([0.5, 0.5], [0, 1], [1, 1])) for _ in range(30)])
    fit = cf.cf_fit_gmm(c, 1)
    assert fit.moments() == pytest.approx(cf.cf_moments(c), rel=1e-3)


def test_fit_rejects_bad_k():
    with pytest.raises(ParameterError):
        cf.cf_fit_gmm(cf.cf_of(d.Gaussian1D(0, 1)), 0)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.tuples(st.floats(-20, 20), st.floats(0.05, 10)), min_size=1, max_size=30))
def test_gaussian_closure_property(params):
    out = cf.cf_product([cf.cf_of(d.Gaussian1D(m, v)) for m, v in params])
    assert isinstance(out, cf.GaussianCF)
    assert out.mean == pytest.approx(sum(m for m, _ in params), abs=1e-9)
    assert out.var == pytest.approx(sum(v for _, v in params), rel=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.floats(-5, 5), st.floats(0.1, 5), st.floats(-10, 10))
def test_cf_at_zero_is_one_and_bounded(m, v, t):
    c = cf.cf_of(d.GaussianMixture([0.5, 0.5], [m, -m], [v, 2 * v]))
    assert abs(complex(cf.evaluate(c, np.array([0.0]))[0]) - 1) < 1e-12
    assert abs(complex(cf.evaluate(c, np.array([t]))[0])) <= 1 + 1e-12

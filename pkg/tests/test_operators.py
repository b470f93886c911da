import itertools
import warnings

import numpy as np
import pytest
from scipy import stats

from pstream import distributions as d
from pstream import fitting
from pstream import operators as op
from pstream.errors import CorrelationError, InputError, MethodError, NumericWarning, ParameterError
from pstream.tuples import base_tuple


def test_select_existence_and_truncation():
    t = base_tuple("a", 0, {"temp": d.Gaussian1D(70, 25)})
    out = op.select_filter(t, "temp", d.Predicate.gt(60))
    assert out.existence == pytest.approx(stats.norm(70, 5).sf(60))
    assert d.cdf_at(out.attrs["temp"], 60.0) == pytest.approx(0.0, abs=1e-9)
    assert out.id != t.id and out.lineage == frozenset(["a"])


def test_select_drops_below_tau():
    m = op.OpMetrics()
    t = base_tuple("a", 0, {"temp": d.Gaussian1D(50, 1)})
    assert op.select_filter(t, "temp", d.Predicate.gt(60), metrics=m) is None
    assert m.dropped == 1


def test_transform_affine_exact():
    t = base_tuple("b", 0, {"x": d.Gaussian1D(3, 4)})
    out = op.transform_delta(t, "x", affine=(2, 1)).attrs["x"]
    assert (out.mean, out.var) == (7.0, 16.0)


def test_transform_delta_method():
    t = base_tuple("b", 0, {"x": d.Gaussian1D(10, 0.01)})
    out = op.transform_delta(t, "x", lambda x: x * x, lambda x: 2 * x)
    g = out.attrs["x"]
    assert (g.mean, g.var) == pytest.approx((100.0, 4.0))
    assert out.derivation("x") is None


def test_transform_zero_gradient_warns():
    t = base_tuple("b", 0, {"x": d.Gaussian1D(0, 1)})
    with pytest.warns(NumericWarning):
        op.transform_delta(t, "x", lambda x: x * x, lambda x: 2 * x)


def test_tumbling_windows():
    ts = [base_tuple(f"w{i}", i, {}) for i in range(1, 11)]
    out = op.window_assign(ts, op.WindowSpec(5, 5))
    assert [(c.start, c.end, len(c.tuples)) for c in out] == [(0, 5, 5), (5, 10, 5)]


def test_sliding_windows_overlap():
    ts = [base_tuple(f"w{i}", i, {}) for i in range(1, 11)]
    out = list(op.window_assign(ts, op.WindowSpec(4, 2)))
    assert all(len(c.tuples) <= 4 for c in out)
    assert sum(len(c.tuples) for c in out) > len(ts)


def test_late_tuples_are_routed_aside():
    w = op.Windower(op.WindowSpec(5, 5))
    w.push(base_tuple("q", 10, {}))
    w.push(base_tuple("z", 4, {}))
    assert [t.id for t in w.late] == ["z"]


def _gaussians(n, m=1.0, v=1.0, prefix="g"):
    return [base_tuple(f"{prefix}{i}", 0, {"v": d.Gaussian1D(m, v)}) for i in range(n)]


@pytest.mark.parametrize("method", ["CF_INVERT", "CF_FIT(3)", "CLT", "HIST_SAMPLE"])
def test_sum_methods_agree_on_gaussians(method):
    r = op.agg_sum(_gaussians(100), "v", method).attrs["v"]
    mean, var = d.moments(r)
    tol = 3.0 if method == "HIST_SAMPLE" else 1e-3
    assert mean == pytest.approx(100.0, abs=tol)
    assert var == pytest.approx(100.0, rel=0.1 if method == "HIST_SAMPLE" else 1e-3)


def test_clt_needs_enough_inputs():
    with pytest.raises(MethodError):
        op.agg_sum(_gaussians(5), "v", "CLT")


def test_sum_rejects_shared_lineage():
    a = base_tuple("x", 0, {"v": d.Gaussian1D(0, 1)})
    b = op.transform_delta(a, "v", affine=(2, 0))
    with pytest.raises(CorrelationError):
        op.agg_sum([a, b], "v")


def test_sum_rejects_uncertain_existence():
    t = base_tuple("x", 0, {"v": 1.0}, existence=0.5)
    with pytest.raises(InputError):
        op.agg_sum([t, base_tuple("y", 0, {"v": 1.0})], "v")


def test_avg_and_count():
    avg = op.agg_avg(_gaussians(100, 5, 4), "v", "CLT").attrs["v"]
    assert (avg.mean, avg.var) == pytest.approx((5.0, 0.04))
    assert op.agg_count(_gaussians(7)).attrs["count"] == 7


def test_max_of_two_standard_normals():
    mx = op.agg_max(_gaussians(2, 0, 1), "v").attrs["v"]
    assert d.moments(mx)[0] == pytest.approx(1 / np.sqrt(np.pi), abs=1e-3)


def test_max_and_min_of_point_masses():
    ts = [base_tuple("a", 0, {"v": 1.0}), base_tuple("b", 0, {"v": d.PointMass(3.0)})]
    assert op.agg_max(ts, "v").attrs["v"] == d.PointMass(3.0)
    assert op.agg_min(ts, "v").attrs["v"] == d.PointMass(1.0)


def test_partition_validation():
    with pytest.raises(ParameterError):
        op.RegionPartition([op.Region("a", [0, 0], [2, 2]), op.Region("b", [1, 1], [3, 3])])


def _enumerate_exceed(weights, probs, threshold):
    total = 0.0
    for bits in itertools.product([0, 1], repeat=len(weights)):
        if sum(b * w for b, w in zip(bits, weights)) > threshold:
            total += np.prod([p if b else 1 - p for b, p in zip(bits, probs)])
    return total


def test_group_by_matches_enumeration():
    part = op.RegionPartition.grid([0, 0, 0], [2, 1, 1], 1)
    weights, probs = [100.0, 150.0, 80.0], [0.5, 0.5, 1.0]
    ts = [base_tuple(f"a{i}", 0, {"loc": [0.5, 0.5, 0.5], "w": w}, existence=p)
          for i, (w, p) in enumerate(zip(weights, probs))]
    (res,) = op.group_by_region_sum(ts, "loc", part, "w", 200)
    assert res.region_id == part.regions[0].id
    assert res.exceed_prob == pytest.approx(_enumerate_exceed(weights, probs, 200), abs=1e-9)
    assert res.expected == pytest.approx(205.0)


def test_group_by_uncertain_location_splits_membership():
    part = op.RegionPartition.grid([0, 0, 0], [2, 1, 1], 1)
    loc = d.GaussianND([1.0, 0.5, 0.5], np.diag([1e-12, 0.01, 0.01]))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NumericWarning)
        res = op.group_by_region_sum([base_tuple("s", 0, {"loc": loc, "w": 10.0})], "loc", part, "w", 5)
    assert [r.exceed_prob for r in res] == pytest.approx([0.5, 0.5], abs=1e-6)


def test_join_quadrature_against_chi_square():
    i3 = np.eye(3)
    p = op.match_probability(d.GaussianND([0, 0, 0], i3), d.GaussianND([0, 0, 0], i3), 1.0)
    assert p == pytest.approx(stats.chi2.cdf(0.5, 3), abs=1e-6)


def test_join_certain_points():
    assert op.match_probability([1, 2, 3], [1, 2, 3], 0.5) == 1.0
    assert op.match_probability([0, 0, 0], [10, 0, 0], 1.0) == 0.0


def test_join_emits_merged_pairs():
    loc = lambda m: d.GaussianND(m, 0.01 * np.eye(3))  # noqa: E731
    left = [base_tuple("o1", 0, {"loc": loc([0, 0, 0])}), base_tuple("o2", 0, {"loc": loc([5, 5, 5])})]
    right = [base_tuple("t1", 0, {"loc": loc([0.05, 0, 0])})]
    out = op.join_prob_equal(left, right, "loc", "loc", 0.5)
    assert len(out) == 1
    assert out[0].attrs["p_match"] > 0.99 and "r.loc" in out[0].attrs
    assert out[0].lineage == frozenset(["o1", "t1"])


def test_lineage_affine_correlated_sum():
    arch = op.BaseTupleArchive()
    x = base_tuple("X", 0, {"v": d.Gaussian1D(0, 1)})
    arch.add(x)
    a = op.transform_delta(x, "v", affine=(2, 0))
    b = op.transform_delta(x, "v", affine=(3, 0))
    out = op.lineage_aware_agg([a, b], "v", arch).attrs["v"]
    assert d.moments(out) == pytest.approx((0.0, 25.0), abs=1e-9)


def test_lineage_mixed_group_matches_monte_carlo():
    rng = np.random.default_rng(3)
    arch = op.BaseTupleArchive()
    x = base_tuple("X", 0, {"v": d.GaussianMixture([0.5, 0.5], [-1, 2], [0.5, 1])})
    arch.add(x)
    a = op.transform_delta(x, "v", affine=(2, 1))
    b = op.select_filter(x, "v", d.Predicate.gt(0))
    others = [base_tuple(f"I{i}", 0, {"v": d.Gaussian1D(rng.normal(), rng.uniform(0.2, 2))}) for i in range(4)]
    arch.extend(others)
    got = op.lineage_aware_agg([a, b] + others, "v", arch, seed=1).attrs["v"]
    g = np.random.default_rng(9)
    xs = x.attrs["v"].sample(g, 3 * 10**5)
    xs = xs[xs > 0][: 10**5]
    tot = 3 * xs + 1
    for t in others:
        tot = tot + t.attrs["v"].sample(g, xs.size)
    assert fitting.variance_distance(got, d.WeightedSamples(tot)) < 0.02


def test_archive_eviction():
    arch = op.BaseTupleArchive(horizon=5)
    arch.extend([base_tuple("a", 0, {}), base_tuple("b", 10, {})])
    assert arch.evict(12) == 1
    assert "b" in arch and "a" not in arch


def test_gaussian_box_probability_matches_scipy_and_repeats(rng):
    a = rng.normal(size=(3, 3))
    cov, mean = a @ a.T + 0.1 * np.eye(3), rng.normal(size=3)
    lo, hi = np.array([-1.0, -np.inf, -0.5]), np.array([1.0, 0.5, 2.0])
    p = op.gaussian_box_probability(mean, cov, lo, hi)
    ref = stats.multivariate_normal.cdf(hi, mean, cov, maxpts=10**7, abseps=1e-10, releps=1e-10, lower_limit=lo)
    assert p == pytest.approx(ref, abs=5e-5)
    assert op.gaussian_box_probability(mean, cov, lo, hi) == p


def test_group_by_threshold_on_reachable_sum_is_strict():
    part = op.RegionPartition.grid([0, 0, 0], [1, 1, 1], 1)
    ts = [base_tuple(f"t{i}", 0, {"loc": [0.5, 0.5, 0.5], "w": w}, existence=0.5)
          for i, w in enumerate([0.1, 0.2, 0.7])]
    (res,) = op.group_by_region_sum(ts, "loc", part, "w", 0.3)
    assert res.exceed_prob == pytest.approx(_enumerate_exceed([1, 2, 7], [0.5] * 3, 3), abs=1e-12)

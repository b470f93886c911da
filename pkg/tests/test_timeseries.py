import numpy as np
import pytest

from pstream import timeseries as ts
from pstream.distributions import Gaussian1D, WeightedSamples
from pstream.errors import DegenerateSeriesError, ParameterError


def test_acf_matches_direct_formula(rng):
    x = rng.normal(size=400)
    acf = ts.sample_acf(x, 5)
    xc = x - x.mean()
    for k in range(6):
        assert acf.gamma[k] == pytest.approx(np.dot(xc[: x.size - k], xc[k:]) / x.size)
    assert acf.rho[0] == 1.0
    assert acf.passes == 2


def test_acf_constant_series():
    with pytest.raises(DegenerateSeriesError):
        ts.sample_acf(np.full(100, 3.0), 5)


def test_acf_lag_limit():
    with pytest.raises(ParameterError):
        ts.sample_acf(np.arange(40.0), 10)


@pytest.mark.parametrize("ma,q", [((), 0), ((0.8,), 1), ((0.6, 0.5), 2)])
def test_identify_order(ma, q):
    x = ts.generate_arma(5000, (), ma, rng=np.random.default_rng(7))
    model = ts.identify_ma_order(ts.sample_acf(x, 10), 8)
    assert model.accepted and model.q == q


def test_identify_rejects_strong_ar():
    x = ts.generate_arma(5000, (0.95,), (), rng=np.random.default_rng(3))
    assert not ts.identify_ma_order(ts.sample_acf(x, 10), 5).accepted


def test_pointwise_band_variant():
    x = ts.generate_arma(5000, (), (), rng=np.random.default_rng(0))
    acf = ts.sample_acf(x, 10)
    assert acf.band == pytest.approx(1.96 / np.sqrt(5000))
    assert ts.identify_ma_order(acf, 8, joint=False).q >= 0


def test_clt_variance_ma1():
    # Var(mean) of MA(1) with theta=0.5 is about (1 + theta)^2 / n.
    x = ts.generate_arma(20000, (), (0.5,), rng=np.random.default_rng(1))
    acf = ts.sample_acf(x, 10)
    g = ts.clt_mean_distribution(x, ts.identify_ma_order(acf, 8), acf)
    assert g.var == pytest.approx(2.25 / 20000, rel=0.1)
    assert abs(g.mean) < 4 * g.sd


def test_block_average_counts_and_types():
    rows = [(float(i), 0, float(v)) for i, v in enumerate(ts.generate_arma(1000, (), (0.5,),
                                                                          rng=np.random.default_rng(2)))]
    out = list(ts.block_average(ts.rows_to_windows(rows), ts.BlockConfig(block=100)))
    assert len(out) == 10
    assert [o.time for o in out] == [100.0 * k for k in range(10)]
    for o in out:
        assert isinstance(o.value, (Gaussian1D, WeightedSamples))
        assert isinstance(o.value, WeightedSamples) == o.rejected


def test_constant_block_is_exact():
    res = ts.summarize_block(0, 0.0, np.full(100, 2.5), ts.BlockConfig(block=100))
    assert res.value.mean == 2.5 and not res.rejected


def test_series_io_roundtrip(tmp_path):
    rows = [(0.0, 0, 1.25), (0.0, 1, -2.0), (1.0, 0, 3.5)]
    ts.write_series_csv(tmp_path / "s.csv", rows)
    assert ts.read_series_csv(tmp_path / "s.csv") == rows
    ts.write_series_bin(tmp_path / "s.bin", rows)
    back = ts.read_series_bin(tmp_path / "s.bin", period=1.0)
    assert [(g, v) for _, g, v in back] == [(g, v) for _, g, v in rows]
    assert [t for t, _, _ in back] == [0.0, 0.0, 1.0]


def test_generator_reproducible():
    a = ts.generate_arma(100, (0.3,), (0.2,), rng=np.random.default_rng(5))
    b = ts.generate_arma(100, (0.3,), (0.2,), rng=np.random.default_rng(5))
    assert np.array_equal(a, b)

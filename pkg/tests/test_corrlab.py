import numpy as np
import pytest

from omsqueeze import corrlab
from omsqueeze.errors import DataError, DivergenceError, DomainError

CFG = corrlab.EstimatorConfig(segment_length=256)


def test_estimator_config_validation():
    for bad in (32, 100, 1000):
        with pytest.raises(DomainError):
            corrlab.EstimatorConfig(segment_length=bad)
    with pytest.raises(DomainError):
        corrlab.EstimatorConfig(overlap=0.95)
    assert corrlab.EstimatorConfig(segment_length=64, overlap=0.5).step == 32


def test_time_series_pair_validation():
    with pytest.raises(DataError):
        corrlab.TimeSeriesPair(1.0, np.zeros(10), np.zeros(11))
    with pytest.raises(DataError):
        corrlab.TimeSeriesPair(0.0, np.zeros(10), np.zeros(10))


def test_white_noise_psd_level():
    x = np.random.default_rng(0).standard_normal(256 * 2000)
    _, p = corrlab.welch_psd(x, 10.0, CFG)
    assert np.mean(p[1:-1]) == pytest.approx(2 / 10.0, rel=0.01)


def test_identical_and_opposite_channels():
    x = np.random.default_rng(1).standard_normal(256 * 20)
    same = corrlab.cross_spectrum(corrlab.TimeSeriesPair(1.0, x, x), CFG)
    np.testing.assert_allclose(same.s_ab.real, same.s_a, rtol=1e-12)
    np.testing.assert_allclose(same.s_ab.imag, 0, atol=1e-12 * same.s_a.max())
    opp = corrlab.cross_spectrum(corrlab.TimeSeriesPair(1.0, x, -x), CFG)
    np.testing.assert_allclose(opp.s_ab.real, -opp.s_a, rtol=1e-12)


def test_independent_channels_decorrelate():
    a, b = np.random.default_rng(2).standard_normal((2, 128 * 10001 // 2 + 128))
    cfg = corrlab.EstimatorConfig(segment_length=128)
    xs = corrlab.cross_spectrum(corrlab.TimeSeriesPair(1.0, a, b), cfg)
    assert xs.n_averages >= 10000
    coh = np.abs(xs.s_ab) / np.sqrt(xs.s_a * xs.s_b)
    assert np.all(coh[1:-1] < 0.03)


def test_short_series_is_data_error():
    with pytest.raises(DataError):
        corrlab.cross_spectrum(corrlab.TimeSeriesPair(1.0, np.zeros(100), np.zeros(100)), CFG)


def test_normalized_correlation_anchor_points():
    assert corrlab.normalized_correlation(2.0, 2.0, 2.0) == 1.0
    assert corrlab.normalized_correlation(1.0, 1.0, 0.0) == 0.0
    assert corrlab.normalized_correlation(1.0, 1.0, -1.0) == -1.0
    with pytest.raises(DomainError):
        corrlab.normalized_correlation(0.0, 1.0, 0.0)


def test_infer_relative_noise_examples_and_errors():
    assert corrlab.infer_relative_noise(0.0) == 1.0
    assert corrlab.infer_relative_noise(1 / 3) == pytest.approx(2.0, rel=1e-15)
    with pytest.raises(DivergenceError):
        corrlab.infer_relative_noise(1.0)
    with pytest.raises(DataError):
        corrlab.infer_relative_noise(-1.01)


def test_efficiency_limits():
    assert corrlab.efficiency(0, 0, 3.0) == 1.0
    assert corrlab.efficiency(1e12, 1e12, 1.0) < 1e-10


def test_statistical_error_examples():
    assert corrlab.statistical_error(0.0, 10**4) == pytest.approx(0.01)
    assert corrlab.statistical_error(1.0, 100) == 0.0
    assert corrlab.statistical_error(-1.0, 100) == 0.0
    with pytest.raises(DomainError):
        corrlab.statistical_error(0.0, 1)


def test_synthesis_rejects_negative_r():
    with pytest.raises(DomainError):
        corrlab.synthesize_pair(-0.1, 1.0, 1024)
    with pytest.raises(DomainError):
        corrlab.synthesize_pair(lambda f: np.where(f > 0.3, -1.0, 1.0), 1.0, 1024)


@pytest.mark.parametrize("r", [4.0, 0.851])
def test_flat_synthesis_recovers_correlation(r):
    p = corrlab.synthesize_pair(r, 1.0, 256 * 2000, seed=3)
    res = corrlab.correlate(p, CFG)
    c = np.mean(res.c[2:-2])
    assert c == pytest.approx((r - 1) / (r + 1), abs=3 * np.mean(res.stat_err_c) / np.sqrt(res.c.size - 4) * 2)


def test_shot_limited_pair_independent():
    p = corrlab.synthesize_pair(1.0, 1.0, 256 * 2000, seed=5)
    res = corrlab.correlate(p, CFG)
    assert np.mean(np.abs(res.c[1:-1]) < 3 * res.stat_err_c[1:-1]) > 0.99


def test_synthesis_deterministic_and_gains():
    p1 = corrlab.synthesize_pair(0.7, 1e5, 4096, alpha=2.0, beta=0.5, seed=9)
    p2 = corrlab.synthesize_pair(0.7, 1e5, 4096, alpha=2.0, beta=0.5, seed=9)
    np.testing.assert_array_equal(p1.a, p2.a)
    np.testing.assert_array_equal(p1.b, p2.b)
    p3 = corrlab.synthesize_pair(0.7, 1e5, 4096, seed=9)
    np.testing.assert_allclose(p1.a, 2.0 * p3.a)
    np.testing.assert_allclose(p1.b, 0.5 * p3.b)


def test_shot_psd_normalization():
    p = corrlab.synthesize_pair(1.0, 1e4, 256 * 1000, shot_psd=3.0, seed=6)
    _, s_a = corrlab.welch_psd(p.a, p.fs, CFG)
    # (1 + R) / 2 in units of shot_psd
    assert np.mean(s_a[1:-1]) == pytest.approx(3.0, rel=0.01)


def test_efficiency_from_dark_records_matches_closed_form():
    fs, n, d = 1.0, 256 * 4000, 10 ** -1.2
    p = corrlab.synthesize_pair(1.0, fs, n, dark_a=d, dark_b=d, seed=7)
    # dark-only record at the same level: d / 2 in units of shot_psd
    rng = np.random.default_rng(8)
    gain = np.sqrt(fs / 2 * d / 2)
    dark = corrlab.TimeSeriesPair(fs, rng.standard_normal(n) * gain, rng.standard_normal(n) * gain)
    res = corrlab.correlate(p, CFG, dark=dark)
    assert np.mean(res.eta[1:-1]) == pytest.approx(corrlab.efficiency(d, d, 1.0), abs=0.002)


def test_squeezing_spectrum_zero_correlation_is_flat():
    n = 5
    res = corrlab.CorrelationResult(np.arange(n, dtype=float), np.ones(n), np.ones(n), np.zeros(n, complex),
                                    np.zeros(n), np.ones(n), np.ones(n), 100, np.full(n, 0.1))
    spec = corrlab.squeezing_spectrum_from_correlation(res)
    np.testing.assert_array_equal(spec.r_db, 0.0)


def test_squeezing_spectrum_monotonic_and_flags():
    c = np.array([-0.5, -0.1, 0.0, 0.2, 0.6, 1.2])
    n = c.size
    res = corrlab.CorrelationResult(np.arange(n, dtype=float), np.ones(n), np.ones(n), c.astype(complex),
                                    c, np.ones(n), np.ones(n), 100, np.full(n, 0.01))
    spec = corrlab.squeezing_spectrum_from_correlation(res)
    assert np.all(np.diff(spec.r_db[:-1]) > 0)
    assert spec.r_db[0] < 0 < spec.r_db[3]
    assert spec.flagged.tolist() == [False] * 5 + [True]
    assert np.isnan(spec.r_db[-1])


def test_significant_band_runs():
    f = np.arange(10, dtype=float)
    c = np.array([0, -0.5, -0.5, 0, -0.5, -0.5, -0.5, 0, 0, -0.01])
    res = corrlab.CorrelationResult(f, np.ones(10), np.ones(10), c.astype(complex), c, np.ones(10),
                                    np.ones(10), 100, np.full(10, 0.01))
    assert corrlab.significant_band(res) == [(4.0, 6.0), (1.0, 2.0)]
    assert corrlab.significant_band(res, f_min=3) == [(4.0, 6.0)]


def test_binary_round_trip_and_errors(tmp_path):
    p = corrlab.synthesize_pair(0.8, 1e5, 1024, alpha=1.5, beta=0.5, seed=1)
    path = tmp_path / "pair.bin"
    corrlab.write_pair_binary(path, p)
    back = corrlab.read_pair_binary(path)
    np.testing.assert_array_equal(back.a, p.a)
    np.testing.assert_array_equal(back.b, p.b)
    assert (back.fs, back.alpha, back.beta) == (1e5, 1.5, 0.5)
    raw = path.read_bytes()
    path.write_bytes(raw[:-8])
    with pytest.raises(DataError, match="byte offset"):
        corrlab.read_pair_binary(path)
    path.write_bytes(b"garbage\n" + raw[raw.find(b"\n") + 1:])
    with pytest.raises(DataError, match="byte 0"):
        corrlab.read_pair_binary(path)


def test_text_reader(tmp_path):
    path = tmp_path / "pair.txt"
    path.write_text("# a b\n1 2\n3 4\n")
    p = corrlab.read_pair_text(path, 10.0)
    np.testing.assert_array_equal(p.a, [1, 3])
    path.write_text("1 2\n3\n")
    with pytest.raises(DataError, match=":2:"):
        corrlab.read_pair_text(path, 10.0)


def test_correlation_csv_columns():
    p = corrlab.synthesize_pair(0.8, 1e5, 256 * 4, seed=1)
    text = corrlab.correlation_csv(corrlab.correlate(p, CFG))
    lines = text.splitlines()
    assert lines[0] == "freq_hz,s_a,s_b,re_s_ab,im_s_ab,c,stat_err,r_db"
    assert len(lines) == 1 + 129
    assert all(len(ln.split(",")) == 8 for ln in lines)

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from canprint.features import (
    FEATURE_NAMES,
    DegenerateSpectrumError,
    FeatureExtractor,
    FeatureVector,
    Spectrum,
    extract,
    extract_many,
    magnitude_spectrum,
    spectral_features,
    time_features,
)
from canprint.waveform import Waveform
from oracles import feature_vector, naive_spectrum, spectral_moments, time_moments

FS = 10e6

# oracle output for the record built in golden_record(), frozen
GOLDEN = [
    2.016556580570018,
    0.023674270588088724,
    1.4752809682366153,
    0.5869987268560104,
    -1.0377083271682757,
    -0.6834993377455447,
    1175107.835218481,
    2.1206006906186445,
    3.6437541079202083,
    666223.2900830654,
    14.433555711564917,
]

windows = arrays(
    np.float64,
    st.integers(8, 64),
    elements=st.floats(-5, 5, allow_nan=False, allow_infinity=False),
)


def golden_record():
    rng = np.random.default_rng(2024)
    n = np.arange(40)
    return 2.0 / (1 + np.exp(-(n - 10) / 2.0)) + 0.01 * rng.normal(size=40)


def close(a, b, rel=1e-9):
    a, b = np.asarray(a, float), np.asarray(b, float)
    scale = np.maximum(np.abs(b), 1.0)
    return np.all(np.abs(a - b) <= rel * scale)


# -- spectrum ----------------------------------------------------------------


def test_constant_window_spectrum():
    sp = magnitude_spectrum(np.full(16, -0.7), FS)
    assert sp.y_m.size == 9
    assert sp.y_m[0] == pytest.approx(16 * 0.7, abs=1e-9)
    assert np.all(np.abs(sp.y_m[1:]) <= 1e-9)


def test_cosine_at_bin_four():
    n = np.arange(64)
    sp = magnitude_spectrum(np.cos(2 * np.pi * 4 * n / 64), FS)
    assert sp.y_m[4] == pytest.approx(32, abs=1e-9)
    assert np.all(np.delete(sp.y_m, [0, 4])[1:] <= 1e-9)
    assert sp.y_f[4] == pytest.approx(4 * FS / 64)


@settings(max_examples=100)
@given(windows)
def test_spectrum_shape_and_axis(x):
    sp = magnitude_spectrum(Waveform(x, FS))
    assert sp.y_f.size == sp.y_m.size == x.size // 2 + 1
    assert sp.y_f[0] == 0 and np.all(np.diff(sp.y_f) > 0)
    assert np.all(sp.y_m >= 0)


@pytest.mark.parametrize("N", [8, 9, 40, 41, 64])
def test_parseval(N):
    x = np.random.default_rng(N).normal(size=N)
    _, mags = naive_spectrum(x.tolist(), FS)
    sp = magnitude_spectrum(x, FS)
    np.testing.assert_allclose(sp.y_m, mags, rtol=1e-9, atol=1e-9)
    m2 = sp.y_m**2
    if N % 2 == 0:
        energy = (m2[0] + 2 * m2[1:-1].sum() + m2[-1]) / N
    else:
        energy = (m2[0] + 2 * m2[1:].sum()) / N
    assert energy == pytest.approx(np.sum(x**2), rel=1e-9)


def test_short_window_rejected():
    with pytest.raises(ValueError, match="at least 8"):
        magnitude_spectrum(np.ones(7), FS)


def test_bare_array_needs_rate():
    with pytest.raises(ValueError):
        magnitude_spectrum(np.ones(8))


# -- time features -----------------------------------------------------------


def test_one_two_three():
    (mx, mn, mu, var, skew, _), bad = time_features([1.0, 2.0, 3.0])
    assert (mx, mn, mu, var) == (3.0, 1.0, 2.0, 1.0)
    assert skew == 0.0
    assert not bad


@given(arrays(np.float64, st.integers(1, 30), elements=st.floats(-5, 5)))
def test_symmetric_window_has_zero_skew(half):
    assume(np.ptp(half) > 1e-3)
    x = np.r_[half, -half]
    (_, _, _, _, skew, _), _ = time_features(x)
    assert abs(skew) <= 1e-12


def test_gaussian_excess_kurtosis():
    x = np.random.default_rng(0).standard_normal(1_000_000)
    (*_, kurt), _ = time_features(x)
    assert abs(kurt) <= 0.02


def test_constant_window_is_degenerate_not_nan():
    fv = extract(np.full(40, 1.5), FS)
    assert fv.max_v == fv.min_v == fv.mean_v == 1.5
    assert fv.variance_v2 == 0 and fv.skewness == 0 and fv.excess_kurtosis == 0
    assert fv.spec_centroid_hz == 0.0
    assert fv.degenerate
    assert np.all(np.isfinite(fv.as_array()))


@settings(max_examples=200)
@given(windows)
def test_time_features_match_oracle(x):
    assume(np.std(x) > 1e-3)
    got, bad = time_features(x)
    assert not bad
    assert close(got, time_moments(x.tolist()))


# -- spectral features -------------------------------------------------------


def grid(n=33):
    return np.arange(n) * FS / 64


def test_single_tone_point_mass():
    m = np.zeros(33)
    m[5] = 3.0
    (c, s, sk, ku, _), bad = spectral_features(Spectrum(grid(), m))
    assert c == pytest.approx(grid()[5])
    assert s == pytest.approx(0.0, abs=1e-6)
    assert (sk, ku) == (0.0, 0.0)
    assert bad


def test_two_equal_bins():
    f = grid()
    m = np.zeros(33)
    m[[3, 11]] = 2.0
    (c, s, sk, _, _), bad = spectral_features(Spectrum(f, m))
    assert c == pytest.approx((f[3] + f[11]) / 2)
    assert s == pytest.approx((f[11] - f[3]) / 2)
    assert sk == pytest.approx(0.0, abs=1e-12)
    assert not bad


def test_flat_spectrum_has_no_irregularity():
    (*_, ik), _ = spectral_features(Spectrum(grid(), np.full(33, 0.4)))
    assert ik == pytest.approx(0.0, abs=1e-12)


def test_all_zero_spectrum_rejected():
    with pytest.raises(DegenerateSpectrumError):
        spectral_features(Spectrum(grid(), np.zeros(33)))
    with pytest.raises(DegenerateSpectrumError):
        extract_many(np.zeros((2, 16)), FS)


@pytest.mark.parametrize("seed", range(10))
def test_random_spectrum_matches_oracle(seed):
    rng = np.random.default_rng(seed)
    f, m = np.arange(32) * 1e5, rng.uniform(0, 2, 32)
    got, _ = spectral_features(Spectrum(f, m))
    assert close(got, spectral_moments(f.tolist(), m.tolist()))


# -- full vector -------------------------------------------------------------


def test_golden_vector():
    got = extract(golden_record(), FS).as_array()
    assert close(got, GOLDEN)


def test_golden_vector_is_the_oracle():
    assert close(feature_vector(golden_record().tolist(), FS), GOLDEN, rel=1e-12)


def test_extract_many_matches_oracle_on_random_windows():
    rng = np.random.default_rng(1)
    X = rng.normal(1.0, 0.5, size=(100, 40))
    F, flags = extract_many(X, FS)
    assert not flags.any()
    for row, x in zip(F, X):
        assert close(row, feature_vector(x.tolist(), FS))


@settings(max_examples=100)
@given(windows)
def test_extract_many_agrees_with_extract(x):
    assume(np.abs(x).max() > 0)
    F, flags = extract_many(x[None, :], FS)
    fv = extract(x, FS)
    np.testing.assert_allclose(F[0], fv.as_array(), rtol=1e-12, atol=1e-12 * FS)
    assert flags[0] == fv.degenerate


@settings(max_examples=100)
@given(windows)
def test_feature_vector_invariants(x):
    assume(np.abs(x).max() > 0)
    fv = extract(x, FS)
    v = fv.as_array()
    assert np.all(np.isfinite(v))
    assert fv.min_v <= fv.mean_v + 1e-12 and fv.mean_v <= fv.max_v + 1e-12
    assert fv.variance_v2 >= 0 and fv.irregularity_k >= 0


@settings(max_examples=100)
@given(windows, st.floats(-3, 3))
def test_shift_property(x, c):
    assume(np.std(x) > 0.1)
    a, b = extract(x, FS), extract(x + c, FS)
    assert b.mean_v == pytest.approx(a.mean_v + c, abs=1e-9)
    assert b.max_v == pytest.approx(a.max_v + c, abs=1e-9)
    assert b.min_v == pytest.approx(a.min_v + c, abs=1e-9)
    for name in ("variance_v2", "skewness", "excess_kurtosis"):
        assert getattr(b, name) == pytest.approx(getattr(a, name), abs=1e-9)


@settings(max_examples=100)
@given(windows, st.floats(0.01, 100))
def test_scale_property(x, a):
    assume(np.std(x) > 0.1)
    p, q = extract(x, FS), extract(a * x, FS)
    rel = pytest.approx
    assert q.mean_v == rel(a * p.mean_v, rel=1e-9, abs=1e-9)
    assert q.max_v == rel(a * p.max_v, rel=1e-9)
    assert q.min_v == rel(a * p.min_v, rel=1e-9)
    assert q.variance_v2 == rel(a * a * p.variance_v2, rel=1e-9)
    assert q.irregularity_k == rel(a * p.irregularity_k, rel=1e-9, abs=1e-9)
    for name in ("skewness", "excess_kurtosis"):
        assert getattr(q, name) == rel(getattr(p, name), abs=1e-9)
    for name in ("spec_centroid_hz", "spec_std_hz"):
        assert getattr(q, name) == rel(getattr(p, name), rel=1e-9)
    for name in ("spec_skewness", "spec_kurtosis"):
        assert getattr(q, name) == rel(getattr(p, name), rel=1e-9, abs=1e-9)


def test_extraction_is_pure():
    x = golden_record()
    assert extract(x, FS).as_array().tobytes() == extract(x.copy(), FS).as_array().tobytes()


def test_feature_vector_round_trip():
    fv = FeatureVector.from_array(GOLDEN, degenerate=True)
    assert fv.as_array().tolist() == GOLDEN and fv.degenerate
    with pytest.raises(ValueError):
        FeatureVector.from_array(GOLDEN[:-1])


def test_feature_extractor_estimator():
    X = np.random.default_rng(0).normal(size=(5, 40))
    fe = FeatureExtractor(sample_rate_hz=FS).fit(X)
    assert fe.n_features_in_ == 40
    np.testing.assert_array_equal(fe.transform(X), extract_many(X, FS)[0])
    assert list(fe.get_feature_names_out()) == list(FEATURE_NAMES)

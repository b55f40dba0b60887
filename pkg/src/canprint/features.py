"""Time- and frequency-domain statistics of a received window.

Eleven features per window, in a fixed order (see :data:`FEATURE_NAMES`).
Spectral moments treat the one-sided magnitude spectrum as weights over
bin frequencies. Degenerate windows (zero spread) report 0 for the
higher moments and set a warning flag instead of producing NaN.
"""

from __future__ import annotations

from dataclasses import astuple, dataclass, fields

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import check_windows
from .waveform import Waveform

FEATURE_NAMES = (
    "max_v",
    "min_v",
    "mean_v",
    "variance_v2",
    "skewness",
    "excess_kurtosis",
    "spec_std_hz",
    "spec_skewness",
    "spec_kurtosis",
    "spec_centroid_hz",
    "irregularity_k",
)
N_FEATURES = len(FEATURE_NAMES)
MIN_WINDOW = 8

# FFT round-off floor relative to the spectral peak
_SPECTRUM_FLOOR = 1e-12
_TIME_DEGENERATE = 1e-12
_SPEC_DEGENERATE = 1e-9


class DegenerateSpectrumError(ValueError):
    """Raised for an all-zero magnitude spectrum."""


@dataclass(frozen=True)
class Spectrum:
    y_f: np.ndarray
    y_m: np.ndarray

    def __post_init__(self):
        if self.y_f.shape != self.y_m.shape or self.y_f.ndim != 1:
            raise ValueError("y_f and y_m must be 1-D arrays of equal length")


@dataclass(frozen=True)
class FeatureVector:
    max_v: float
    min_v: float
    mean_v: float
    variance_v2: float
    skewness: float
    excess_kurtosis: float
    spec_std_hz: float
    spec_skewness: float
    spec_kurtosis: float
    spec_centroid_hz: float
    irregularity_k: float
    degenerate: bool = False

    def as_array(self) -> np.ndarray:
        return np.array(astuple(self)[:N_FEATURES], dtype=np.float64)

    @classmethod
    def from_array(cls, values, degenerate=False) -> "FeatureVector":
        values = [float(v) for v in values]
        if len(values) != N_FEATURES:
            raise ValueError(f"expected {N_FEATURES} values, got {len(values)}")
        return cls(*values, degenerate=bool(degenerate))


assert tuple(f.name for f in fields(FeatureVector))[:N_FEATURES] == FEATURE_NAMES


def _samples(w) -> tuple[np.ndarray, float | None]:
    if isinstance(w, Waveform):
        return w.samples, w.sample_rate_hz
    return np.asarray(w, dtype=np.float64).ravel(), None


def magnitude_spectrum(w, sample_rate_hz: float | None = None) -> Spectrum:
    """One-sided DFT magnitude with a rectangular window.

    Bin ``k`` sits at ``k * fs / N``. Magnitudes below ``1e-12`` of the
    peak are FFT round-off and are set to zero.
    """
    x, fs = _samples(w)
    fs = sample_rate_hz or fs
    if fs is None:
        raise ValueError("sample_rate_hz is required for a bare sample array")
    if x.size < MIN_WINDOW:
        raise ValueError(f"window needs at least {MIN_WINDOW} samples, got {x.size}")
    y_m = np.abs(np.fft.rfft(x))
    peak = y_m.max()
    y_m[y_m < _SPECTRUM_FLOOR * peak] = 0.0
    return Spectrum(np.fft.rfftfreq(x.size, 1.0 / fs), y_m)


def time_features(w) -> tuple[tuple[float, ...], bool]:
    """``(max, min, mean, unbiased variance, skewness, excess kurtosis)`` and
    a degenerate flag.

    Skewness and kurtosis are standardized with the population (1/N)
    standard deviation.
    """
    x, _ = _samples(w)
    if x.size < 2:
        raise ValueError("time features need at least 2 samples")
    mu = x.mean()
    d = x - mu
    m2 = np.mean(d * d)
    sigma = np.sqrt(m2)
    var = d @ d / (x.size - 1)
    scale = max(np.abs(x).max(), np.finfo(float).tiny)
    if sigma <= _TIME_DEGENERATE * scale:
        return (x.max(), x.min(), mu, var, 0.0, 0.0), True
    z = d / sigma
    z2 = z * z
    return (x.max(), x.min(), mu, var, np.mean(z2 * z), np.mean(z2 * z2) - 3.0), False


def spectral_features(sp: Spectrum) -> tuple[tuple[float, ...], bool]:
    """``(centroid, std, skewness, kurtosis, irregularity_k)`` and a
    degenerate flag. Note the return order differs from
    :data:`FEATURE_NAMES`; :func:`extract` reorders."""
    f, m = sp.y_f, sp.y_m
    total = m.sum()
    if not total > 0:
        raise DegenerateSpectrumError("all-zero magnitude spectrum")
    centroid = f @ m / total
    d = f - centroid
    d2 = d * d
    spread = np.sqrt(d2 @ m / total)
    irregularity = np.abs(m[1:-1] - (m[:-2] + m[1:-1] + m[2:]) / 3.0).sum()
    if spread <= _SPEC_DEGENERATE * max(f[-1], np.finfo(float).tiny):
        return (centroid, spread, 0.0, 0.0, irregularity), True
    skew = (d2 * d) @ m / (spread**3 * total)
    kurt = (d2 * d2) @ m / (spread**4 * total) - 3.0
    return (centroid, spread, skew, kurt, irregularity), False


def extract(w, sample_rate_hz: float | None = None) -> FeatureVector:
    """Full 11-feature vector of one window."""
    x, fs = _samples(w)
    fs = sample_rate_hz or fs
    t, t_bad = time_features(x)
    (c, s, sk, ku, ik), s_bad = spectral_features(magnitude_spectrum(x, fs))
    return FeatureVector(*t, s, sk, ku, c, ik, degenerate=t_bad or s_bad)


def extract_many(windows, sample_rate_hz: float) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized :func:`extract` over the rows of ``windows``.

    Returns the ``(n, 11)`` feature matrix and a boolean degenerate flag
    per row.
    """
    X = check_windows(windows, MIN_WINDOW)
    n, N = X.shape

    mu = X.mean(axis=1)
    D = X - mu[:, None]
    m2 = np.mean(D * D, axis=1)
    sigma = np.sqrt(m2)
    var = np.einsum("ij,ij->i", D, D) / (N - 1)
    scale = np.maximum(np.abs(X).max(axis=1), np.finfo(float).tiny)
    t_bad = sigma <= _TIME_DEGENERATE * scale
    safe = np.where(t_bad, 1.0, sigma)
    Z = D / safe[:, None]
    Z2 = Z * Z
    skew = np.where(t_bad, 0.0, np.mean(Z2 * Z, axis=1))
    kurt = np.where(t_bad, 0.0, np.mean(Z2 * Z2, axis=1) - 3.0)

    M = np.abs(np.fft.rfft(X, axis=1))
    M[M < _SPECTRUM_FLOOR * M.max(axis=1, keepdims=True)] = 0.0
    f = np.fft.rfftfreq(N, 1.0 / sample_rate_hz)
    total = M.sum(axis=1)
    if np.any(total <= 0):
        bad = int(np.flatnonzero(total <= 0)[0])
        raise DegenerateSpectrumError(f"row {bad}: all-zero magnitude spectrum")
    centroid = M @ f / total
    Df = f[None, :] - centroid[:, None]
    Df2 = Df * Df
    spread = np.sqrt(np.einsum("ij,ij->i", Df2, M) / total)
    s_bad = spread <= _SPEC_DEGENERATE * f[-1]
    sp = np.where(s_bad, 1.0, spread)
    sskew = np.where(s_bad, 0.0, np.einsum("ij,ij->i", Df2 * Df, M) / (sp**3 * total))
    skurt = np.where(s_bad, 0.0, np.einsum("ij,ij->i", Df2 * Df2, M) / (sp**4 * total) - 3.0)
    irr = np.abs(M[:, 1:-1] - (M[:, :-2] + M[:, 1:-1] + M[:, 2:]) / 3.0).sum(axis=1)

    F = np.column_stack(
        [X.max(axis=1), X.min(axis=1), mu, var, skew, kurt, spread, sskew, skurt, centroid, irr]
    )
    return F, t_bad | s_bad


class FeatureExtractor(TransformerMixin, BaseEstimator):
    """Stateless transformer from raw windows to the 11 features.

    Parameters
    ----------
    sample_rate_hz : float
        Sampling rate of the windows; sets the frequency axis of the
        spectral features.
    """

    def __init__(self, sample_rate_hz: float = 10e6):
        self.sample_rate_hz = sample_rate_hz

    def fit(self, X, y=None):
        X = check_windows(X, MIN_WINDOW)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        return extract_many(X, self.sample_rate_hz)[0]

    def get_feature_names_out(self, input_features=None):
        return np.asarray(FEATURE_NAMES, dtype=object)

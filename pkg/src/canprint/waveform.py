"""Sampled differential-voltage waveforms and oscilloscope CSV import."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass
class Waveform:
    """Uniformly sampled differential voltage.

    Attributes
    ----------
    samples : ndarray of float64
        Differential voltage (CAN-H minus CAN-L) in volts.
    sample_rate_hz : float
        Sampling rate.
    meta : dict
        Free-form provenance labels, typically ``ecu_id`` and ``channel_id``.
    """

    samples: np.ndarray
    sample_rate_hz: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).ravel()
        self.sample_rate_hz = float(self.sample_rate_hz)
        if not self.sample_rate_hz > 0:
            raise ValueError(f"sample_rate_hz must be positive, got {self.sample_rate_hz}")

    def __len__(self):
        return self.samples.size

    @property
    def dt(self) -> float:
        return 1.0 / self.sample_rate_hz

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.samples.size) * self.dt

    def with_samples(self, samples, **meta) -> "Waveform":
        """Return a copy carrying new samples and merged metadata."""
        merged = dict(self.meta)
        merged.update(meta)
        return Waveform(samples, self.sample_rate_hz, merged)


def require_nonempty(w: Waveform) -> None:
    if len(w) == 0:
        raise ValueError("waveform has no samples")


def read_scope_csv(path, time_col: int = 0, volt_col: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Read a two-column ``time,volts`` oscilloscope export.

    Rows that do not parse as numbers (vendor preambles, unit rows, column
    headers) are skipped. Rows are sorted by time.
    """
    times, volts = [], []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if len(row) <= max(time_col, volt_col):
                continue
            try:
                t = float(row[time_col])
                v = float(row[volt_col])
            except ValueError:
                continue
            if np.isfinite(t) and np.isfinite(v):
                times.append(t)
                volts.append(v)
    if len(times) < 2:
        raise ValueError(f"{path}: fewer than two numeric time,volts rows")
    t = np.asarray(times)
    v = np.asarray(volts)
    order = np.argsort(t, kind="stable")
    return t[order], v[order]


def resample(times: np.ndarray, volts: np.ndarray, sample_rate_hz: float) -> np.ndarray:
    """Linearly interpolate a non-uniform capture onto a uniform grid.

    The grid starts at ``times[0]`` and never extrapolates past ``times[-1]``.
    """
    if sample_rate_hz <= 0:
        raise ValueError("sample_rate_hz must be positive")
    span = times[-1] - times[0]
    if span <= 0:
        raise ValueError("capture spans zero time")
    n = int(np.floor(span * sample_rate_hz + 1e-9)) + 1
    grid = times[0] + np.arange(n) / sample_rate_hz
    return np.interp(grid, times, volts)


def load_capture(path, sample_rate_hz: float, **meta) -> Waveform:
    """Load an oscilloscope CSV and resample it to ``sample_rate_hz``."""
    t, v = read_scope_csv(path)
    meta.setdefault("source", Path(path).name)
    return Waveform(resample(t, v, sample_rate_hz), sample_rate_hz, meta)

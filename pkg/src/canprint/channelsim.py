"""Transmitter (ECU) and cable (channel) distortion models.

The received signal for ECU ``i`` over channel ``j`` is the channel impulse
response convolved with the ECU's shaped output. ECU shaping happens in
continuous time and is sampled; the channel is a causal FIR filter.
"""

from __future__ import annotations

import os
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import signal

from .canframe import CanFrame, SignalingConfig, encode_frame, render_waveform
from .waveform import Waveform, load_capture, require_nonempty

FAMILIES = ("GXL", "TXL", "CANDATA")
LENGTHS_M = (0.5, 1.0, 2.0, 3.0, 4.0, 5.0)

TRUNCATE_REL = 1e-6
_MAX_TAPS = 1 << 14


@dataclass(frozen=True)
class EcuProfile:
    """Per-transmitter analogue imperfections.

    A zero rise or fall time means an ideal step; it is only accepted by
    :func:`shape_transmit` with ``strict=False``.
    """

    ecu_id: str
    rise_time_s: float = 300e-9
    fall_time_s: float = 300e-9
    overshoot_frac: float = 0.0
    ring_freq_hz: float = 1.5e6
    ring_damping: float = 1e6
    level_offset_v: float = 0.0
    jitter_std_s: float = 0.0
    noise_std_v: float = 0.0

    def __post_init__(self):
        if self.rise_time_s < 0 or self.fall_time_s < 0:
            raise ValueError(f"{self.ecu_id}: rise/fall times must be non-negative")
        if not 0 <= self.overshoot_frac < 1:
            raise ValueError(f"{self.ecu_id}: overshoot_frac must be in [0, 1)")
        if self.jitter_std_s < 0 or self.noise_std_v < 0:
            raise ValueError(f"{self.ecu_id}: standard deviations must be >= 0")
        if self.ring_freq_hz < 0 or self.ring_damping < 0:
            raise ValueError(f"{self.ecu_id}: ring parameters must be >= 0")


@dataclass(frozen=True)
class ChannelProfile:
    """Cable model: explicit FIR taps, or a second-order low-pass.

    ``dc_gain`` scales derived taps and models resistive loss along the
    cable; it is ignored when ``taps`` are given explicitly.
    """

    channel_id: str
    family: str = "CANDATA"
    length_m: float = 2.0
    taps: tuple | None = None
    cutoff_hz: float | None = None
    q_factor: float | None = None
    dc_gain: float = 1.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"{self.channel_id}: unknown cable family {self.family!r}")
        if self.taps is not None:
            taps = tuple(float(t) for t in self.taps)
            if not taps:
                raise ValueError(f"{self.channel_id}: taps must be non-empty")
            object.__setattr__(self, "taps", taps)
            _check_dc(self.channel_id, sum(taps))
        elif self.cutoff_hz is None or self.q_factor is None:
            raise ValueError(f"{self.channel_id}: give taps or both cutoff_hz and q_factor")
        elif self.cutoff_hz <= 0 or self.q_factor <= 0:
            raise ValueError(f"{self.channel_id}: cutoff_hz and q_factor must be positive")
        else:
            _check_dc(self.channel_id, self.dc_gain)

    def impulse_response(self, sample_rate_hz: float) -> np.ndarray:
        if self.taps is not None:
            return np.asarray(self.taps)
        h = lowpass_taps(self.cutoff_hz, self.q_factor, sample_rate_hz) * self.dc_gain
        _check_dc(self.channel_id, h.sum())
        return h


def _check_dc(channel_id, gain):
    if not 0.9 <= gain <= 1.1:
        raise ValueError(f"{channel_id}: DC gain {gain:.4f} outside [0.9, 1.1]")


@dataclass
class SimConfig:
    ecus: list
    channels: list
    frame: CanFrame = field(default_factory=lambda: default_frame())
    records_per_class: int = 3600
    window_len: int = 40
    rng_seed: int = 0
    signaling: SignalingConfig = field(default_factory=SignalingConfig)
    idle_bits: int = 3
    include_trailer: bool = False

    def __post_init__(self):
        if not self.ecus:
            raise ValueError("ecus: at least one ECU profile is required")
        if not self.channels:
            raise ValueError("channels: at least one channel profile is required")
        if self.records_per_class < 1:
            raise ValueError("records_per_class must be >= 1")
        if self.window_len < 8:
            raise ValueError("window_len must be >= 8")
        if self.idle_bits < 1:
            raise ValueError("idle_bits must be >= 1")
        if not 0 <= self.rng_seed < 1 << 64:
            raise ValueError("rng_seed must be an unsigned 64-bit integer")
        for kind, items, key in (("ECU", self.ecus, "ecu_id"), ("channel", self.channels, "channel_id")):
            ids = [getattr(p, key) for p in items]
            if len(set(ids)) != len(ids):
                raise ValueError(f"duplicate {kind} ids: {ids}")


@dataclass
class RecordSet:
    """Fixed-length received windows with their class labels."""

    windows: np.ndarray
    ecu_ids: np.ndarray
    channel_ids: np.ndarray
    sample_rate_hz: float

    def __len__(self):
        return self.windows.shape[0]

    def pairs(self) -> list[tuple[str, str]]:
        seen = dict.fromkeys(zip(self.ecu_ids.tolist(), self.channel_ids.tolist()))
        return list(seen)


# -- ECU shaping -------------------------------------------------------------


def _edge_response(tau_s, time_const, overshoot, ring_hz, damping):
    """Unit step response of one edge, minus the ideal step, for tau >= 0."""
    if time_const > 0:
        resp = -np.exp(-tau_s / time_const)
    else:
        resp = np.zeros_like(tau_s)
    if overshoot > 0:
        resp = resp + overshoot * np.exp(-damping * tau_s) * np.sin(2 * np.pi * ring_hz * tau_s)
    return resp


def _transient_len(time_const, damping, overshoot, fs):
    spans = [time_const * 40.0]
    if overshoot > 0:
        spans.append(40.0 / damping if damping > 0 else np.inf)
    return max(spans) * fs


def shape_transmit(ideal: Waveform, ecu: EcuProfile, seed, *, strict: bool = True) -> Waveform:
    """Replace each ideal edge with the ECU's analogue transition.

    Each transition is an exponential approach with time constant
    ``rise_time / 2.2`` (or ``fall_time / 2.2``) plus a damped sinusoid of
    amplitude ``overshoot_frac * swing``. Edge instants get clamped Gaussian
    jitter, plateaus shift by ``level_offset_v`` and white Gaussian noise is
    added. ``seed`` may be an int, a SeedSequence or a Generator.
    """
    require_nonempty(ideal)
    fs = ideal.sample_rate_hz
    if strict:
        floor = 2.0 / fs
        if ecu.rise_time_s < floor or ecu.fall_time_s < floor:
            raise ValueError(
                f"{ecu.ecu_id}: rise/fall time below two sample periods ({floor:.3g} s) "
                "cannot be resolved"
            )
    rng = np.random.default_rng(seed)
    x = ideal.samples
    n = x.size
    edges = np.flatnonzero(np.diff(x)) + 1
    swings = x[edges] - x[edges - 1]

    jitter = np.zeros(edges.size)
    if ecu.jitter_std_s > 0 and edges.size:
        jitter = rng.normal(0.0, ecu.jitter_std_s, edges.size)
        lim = 3 * ecu.jitter_std_s
        jitter = np.clip(jitter, -lim, lim)
    pos = edges + jitter * fs  # edge instants in sample units

    starts = np.clip(np.ceil(pos).astype(np.int64), 0, n)
    out = np.full(n, x[0])
    steps = np.zeros(n + 1)
    np.add.at(steps, starts, swings)
    out += np.cumsum(steps[:n])

    rise_tc = ecu.rise_time_s / 2.2
    fall_tc = ecu.fall_time_s / 2.2
    for p, k0, dv in zip(pos, starts, swings):
        tc = rise_tc if dv > 0 else fall_tc
        span = _transient_len(tc, ecu.ring_damping, ecu.overshoot_frac, fs)
        k1 = int(min(n, k0 + np.ceil(span) + 1))
        if k1 <= k0:
            continue
        tau = (np.arange(k0, k1) - p) / fs
        out[k0:k1] += dv * _edge_response(
            tau, tc, ecu.overshoot_frac, ecu.ring_freq_hz, ecu.ring_damping
        )

    out += ecu.level_offset_v
    if ecu.noise_std_v > 0:
        out += rng.normal(0.0, ecu.noise_std_v, n)
    return ideal.with_samples(out, ecu_id=ecu.ecu_id)


# -- channel -----------------------------------------------------------------


def convolve(h, s: Waveform) -> Waveform:
    """Causal FIR filtering, same length as the input: ``y[n] = sum_k h[k] s[n-k]``."""
    h = np.asarray(h, dtype=np.float64).ravel()
    if h.size == 0:
        raise ValueError("impulse response must be non-empty")
    y = np.convolve(s.samples, h)[: len(s)]
    return s.with_samples(y)


def lowpass_taps(cutoff_hz: float, q_factor: float, sample_rate_hz: float) -> np.ndarray:
    """Impulse response of a bilinear-transformed second-order low-pass.

    Frequency is prewarped so the digital cutoff matches ``cutoff_hz``. The
    response is truncated after the last tap with magnitude at least
    ``1e-6 * max|h|``.
    """
    if cutoff_hz >= sample_rate_hz / 2:
        raise ValueError(
            f"cutoff_hz={cutoff_hz:g} must be below Nyquist ({sample_rate_hz / 2:g} Hz)"
        )
    w0 = 2 * np.pi * cutoff_hz / sample_rate_hz
    alpha = np.sin(w0) / (2 * q_factor)
    cw = np.cos(w0)
    b = np.array([(1 - cw) / 2, 1 - cw, (1 - cw) / 2])
    a = np.array([1 + alpha, -2 * cw, 1 - alpha])
    impulse = np.zeros(_MAX_TAPS)
    impulse[0] = 1.0
    h = signal.lfilter(b / a[0], a / a[0], impulse)
    mag = np.abs(h)
    keep = np.flatnonzero(mag >= TRUNCATE_REL * mag.max())
    return h[: keep[-1] + 1]


def apply_channel(s: Waveform, ch: ChannelProfile) -> Waveform:
    y = convolve(ch.impulse_response(s.sample_rate_hz), s)
    y.meta["channel_id"] = ch.channel_id
    return y


# -- default profile bank ----------------------------------------------------

# family -> (cutoff at zero length [Hz], length scale [m], Q, loss per metre)
FAMILY_TABLE = {
    "GXL": (4.2e6, 2.4, 0.62, 0.0070),
    "TXL": (4.4e6, 2.8, 0.74, 0.0060),
    "CANDATA": (4.6e6, 3.2, 0.86, 0.0050),
}


def default_channel(family: str, length_m: float) -> ChannelProfile:
    """Channel for a cable family and length from :data:`FAMILY_TABLE`.

    Longer cable lowers the cutoff and the DC gain; the family sets Q.
    """
    f0, scale, q, loss = FAMILY_TABLE[family]
    return ChannelProfile(
        channel_id=f"{family}-{length_m:g}m",
        family=family,
        length_m=length_m,
        cutoff_hz=f0 / (1 + length_m / scale),
        q_factor=q,
        dc_gain=1.0 - loss * length_m,
    )


def default_channels(families=FAMILIES, lengths=LENGTHS_M) -> list[ChannelProfile]:
    return [default_channel(f, L) for f in families for L in lengths]


def default_ecus() -> list[EcuProfile]:
    """Four nominally identical transceivers with small part-to-part spread."""
    base = dict(jitter_std_s=2e-9, noise_std_v=0.004)
    return [
        EcuProfile("E1", 300e-9, 340e-9, 0.080, 1.60e6, 1.2e6, 0.030, **base),
        EcuProfile("E2", 330e-9, 320e-9, 0.100, 1.45e6, 1.0e6, 0.045, **base),
        EcuProfile("E3", 290e-9, 360e-9, 0.095, 1.70e6, 1.4e6, 0.060, **base),
        EcuProfile("E4", 350e-9, 350e-9, 0.070, 1.55e6, 0.9e6, 0.075, **base),
    ]


def default_frame() -> CanFrame:
    return CanFrame(id=0x12, data=bytes([0x55, 0xAA, 0x55, 0xAA, 0x55, 0xAA, 0x55, 0xAA]))


# -- dataset generation ------------------------------------------------------


def setting_seed(rng_seed: int, ecu_id: str, channel_id: str) -> np.random.SeedSequence:
    """Independent, schedule-free sub-seed for one (ECU, channel) setting."""
    key = (zlib.crc32(ecu_id.encode()), zlib.crc32(channel_id.encode()))
    return np.random.SeedSequence(entropy=rng_seed, spawn_key=key)


def receive(frame_bits, ecu, channel, cfg: SignalingConfig, rng) -> tuple[Waveform, int]:
    """One transmission: render, shape, filter. Returns the waveform and the
    sample index of the first dominant edge."""
    ideal = render_waveform(frame_bits, cfg)
    first = int(np.flatnonzero(np.diff(ideal.samples))[0] + 1)
    shaped = shape_transmit(ideal, ecu, rng)
    return apply_channel(shaped, channel), first


def _simulate_setting(cfg: SimConfig, ecu: EcuProfile, ch: ChannelProfile) -> np.ndarray:
    rng = np.random.default_rng(setting_seed(cfg.rng_seed, ecu.ecu_id, ch.channel_id))
    seq = encode_frame(cfg.frame)
    bits = (1,) * cfg.idle_bits + seq.bits
    # without the trailer, the span ends after the CRC delimiter
    n_bits = len(bits) if cfg.include_trailer else cfg.idle_bits + seq.stuffed_end + 1
    stop = n_bits * cfg.signaling.samples_per_bit
    windows = []
    have = 0
    while have < cfg.records_per_class:
        y, first = receive(bits, ecu, ch, cfg.signaling, rng)
        body = y.samples[first:stop]
        k = body.size // cfg.window_len
        if k == 0:
            raise ValueError("window_len exceeds the received frame length")
        w = body[: k * cfg.window_len].reshape(k, cfg.window_len)
        windows.append(w)
        have += k
    return np.concatenate(windows)[: cfg.records_per_class]


def worker_count() -> int:
    raw = os.environ.get("CANPRINT_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ValueError(f"CANPRINT_THREADS must be an integer, got {raw!r}") from None


def generate_dataset(cfg: SimConfig, n_jobs: int | None = None) -> RecordSet:
    """Simulate ``records_per_class`` windows for every (ECU, channel) pair.

    Each repetition of the frame gets fresh jitter and noise. Windows are
    consecutive ``window_len``-sample slices starting at the first dominant
    edge of each transmission and ending at the CRC delimiter; the
    recessive ACK/EOF trailer is only windowed when ``include_trailer`` is
    set. Output is identical for any ``n_jobs``.
    """
    settings = [(e, c) for e in cfg.ecus for c in cfg.channels]
    n_jobs = n_jobs or worker_count()
    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            blocks = list(pool.map(lambda ec: _simulate_setting(cfg, *ec), settings))
    else:
        blocks = [_simulate_setting(cfg, e, c) for e, c in settings]
    r = cfg.records_per_class
    return RecordSet(
        windows=np.concatenate(blocks),
        ecu_ids=np.repeat([e.ecu_id for e, _ in settings], r).astype(object),
        channel_ids=np.repeat([c.channel_id for _, c in settings], r).astype(object),
        sample_rate_hz=cfg.signaling.sample_rate_hz,
    )


def segment_capture(w: Waveform, window_len: int, threshold_v: float | None = None) -> np.ndarray:
    """Cut an imported capture into windows from its first dominant edge.

    The edge is the first upward crossing of ``threshold_v`` (default: the
    midpoint of the capture's range).
    """
    x = w.samples
    if threshold_v is None:
        threshold_v = 0.5 * (x.min() + x.max())
    above = x >= threshold_v
    ups = np.flatnonzero(above[1:] & ~above[:-1]) + 1
    if ups.size == 0:
        raise ValueError("no dominant edge found in capture")
    body = x[ups[0]:]
    k = body.size // window_len
    if k == 0:
        raise ValueError("capture shorter than one window after the first edge")
    return body[: k * window_len].reshape(k, window_len)


def overlay(cfg: SimConfig, n_bits: int = 12) -> tuple[np.ndarray, dict]:
    """One received transmission per setting, for plotting side by side.

    Each trace starts at the first dominant edge and spans ``n_bits`` bit
    times. The ``ideal`` column is the undistorted rectangular signal.
    """
    spb = cfg.signaling.samples_per_bit
    n = n_bits * spb
    bits = (1,) * cfg.idle_bits + encode_frame(cfg.frame).bits
    ideal = render_waveform(bits, cfg.signaling)
    first = cfg.idle_bits * spb
    cols = {"ideal": ideal.samples[first : first + n]}
    for e in cfg.ecus:
        for c in cfg.channels:
            ss = setting_seed(cfg.rng_seed, e.ecu_id, c.channel_id)
            rng = np.random.default_rng(np.random.SeedSequence(ss.entropy, spawn_key=(*ss.spawn_key, 1)))
            y, _ = receive(bits, e, c, cfg.signaling, rng)
            cols[f"{e.ecu_id}|{c.channel_id}"] = y.samples[first : first + n]
    n = min(len(v) for v in cols.values())
    times = np.arange(n) / cfg.signaling.sample_rate_hz
    return times, {k: v[:n] for k, v in cols.items()}


def load_capture_records(
    path, sample_rate_hz: float, window_len: int = 40, ecu_id: str = "unknown",
    channel_id: str = "unknown", threshold_v: float | None = None,
) -> RecordSet:
    """Records from a real oscilloscope export instead of the simulator."""
    w = load_capture(path, sample_rate_hz, ecu_id=ecu_id, channel_id=channel_id)
    windows = segment_capture(w, window_len, threshold_v)
    k = windows.shape[0]
    return RecordSet(
        windows=windows,
        ecu_ids=np.array([ecu_id] * k, dtype=object),
        channel_ids=np.array([channel_id] * k, dtype=object),
        sample_rate_hz=sample_rate_hz,
    )

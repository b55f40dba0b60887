"""CAN 2.0A data-frame encoding and ideal differential-voltage rendering.

Logical levels follow the bus convention: 0 is dominant, 1 is recessive.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .waveform import Waveform

CRC15_POLY = 0x4599  # x^15+x^14+x^10+x^8+x^7+x^4+x^3+1 without the x^15 term
STUFF_RUN = 5

DOMINANT = 0
RECESSIVE = 1


@dataclass(frozen=True)
class CanFrame:
    """Standard-format data frame."""

    id: int
    data: bytes = b""
    dlc: int | None = None
    rtr: bool = False

    def __post_init__(self):
        data = bytes(self.data)
        object.__setattr__(self, "data", data)
        if self.dlc is None:
            object.__setattr__(self, "dlc", len(data))
        if not 0 <= self.id < 1 << 11:
            raise ValueError(f"identifier must fit in 11 bits, got {self.id:#x}")
        if not 0 <= self.dlc <= 8:
            raise ValueError(f"dlc must be in 0..8, got {self.dlc}")
        if len(data) != self.dlc:
            raise ValueError(f"dlc={self.dlc} but {len(data)} data bytes given")
        if self.rtr:
            raise ValueError("remote frames are not supported")

    @classmethod
    def from_hex(cls, ident: str | int, data_hex: str = "") -> "CanFrame":
        """Build a frame from CLI-style strings, e.g. ``("0x12", "55AA")``."""
        if isinstance(ident, str):
            ident = int(ident, 0)
        return cls(id=ident, data=bytes.fromhex(data_hex.replace(" ", "")))


@dataclass(frozen=True)
class BitSequence:
    """Transmitted bit stream.

    ``stuff_positions`` index into ``bits``; ``stuffed_end`` is one past the
    last bit of the stuffed region (end of the CRC field).
    """

    bits: tuple
    stuff_positions: tuple = ()
    stuffed_end: int | None = None

    def __len__(self):
        return len(self.bits)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.bits, dtype=np.int8)


@dataclass(frozen=True)
class SignalingConfig:
    bitrate_bps: float = 500_000.0
    sample_rate_hz: float = 10_000_000.0
    v_dom_diff: float = 2.0
    v_rec_diff: float = 0.0

    def __post_init__(self):
        if self.bitrate_bps <= 0:
            raise ValueError("bitrate_bps must be positive")
        if self.sample_rate_hz < 20 * self.bitrate_bps:
            raise ValueError(
                f"sample_rate_hz={self.sample_rate_hz:g} gives fewer than 20 samples per bit "
                f"at {self.bitrate_bps:g} bit/s"
            )
        if not self.v_dom_diff > self.v_rec_diff:
            raise ValueError("v_dom_diff must exceed v_rec_diff")

    @property
    def samples_per_bit(self) -> int:
        return int(round(self.sample_rate_hz / self.bitrate_bps))


def _int_bits(value: int, width: int) -> list[int]:
    return [(value >> (width - 1 - i)) & 1 for i in range(width)]


def crc15(bits) -> int:
    """CAN CRC-15 of an unstuffed SOF..data bit prefix.

    Computed as the remainder of ``M(x) * x^15`` modulo the generator, with
    the message held as one integer.
    """
    n = len(bits)
    if n == 0:
        return 0
    msg = int("".join("1" if b else "0" for b in bits), 2) << 15
    gen = CRC15_POLY | 1 << 15
    for shift in range(n - 1, -1, -1):
        if msg >> (shift + 15) & 1:
            msg ^= gen << shift
    return msg & 0x7FFF


def frame_fields(frame: CanFrame) -> dict[str, list[int]]:
    """Unstuffed frame fields in transmission order."""
    head = [DOMINANT] + _int_bits(frame.id, 11) + [int(frame.rtr), 0, 0] + _int_bits(frame.dlc, 4)
    data = [b for byte in frame.data for b in _int_bits(byte, 8)]
    crc = _int_bits(crc15(head + data), 15)
    return {
        "arbitration_control": head,
        "data": data,
        "crc": crc,
        "trailer": [RECESSIVE] * 10,  # CRC delim, ACK slot, ACK delim, 7-bit EOF
    }


def unstuffed(frame: CanFrame) -> list[int]:
    return [b for part in frame_fields(frame).values() for b in part]


def stuff(bits) -> tuple[list[int], list[int]]:
    """Insert a complement bit after every run of five equal bits.

    Returns the stuffed bits and the positions of inserted bits. A stuff bit
    starts the next run.
    """
    out: list[int] = []
    positions: list[int] = []
    run_val, run_len = None, 0
    for b in bits:
        out.append(b)
        if b == run_val:
            run_len += 1
        else:
            run_val, run_len = b, 1
        if run_len == STUFF_RUN:
            positions.append(len(out))
            out.append(1 - b)
            run_val, run_len = 1 - b, 1
    return out, positions


def destuff(bits) -> list[int]:
    """Inverse of :func:`stuff`; raises on a stuffing violation."""
    out: list[int] = []
    run_val, run_len = None, 0
    skip = False
    for i, b in enumerate(bits):
        if skip:
            if b == run_val:
                raise ValueError(f"stuff error at bit {i}: expected complement bit")
            run_val, run_len = b, 1
            skip = False
            continue
        out.append(b)
        if b == run_val:
            run_len += 1
        else:
            run_val, run_len = b, 1
        if run_len == STUFF_RUN:
            skip = True
    return out


def encode_frame(frame: CanFrame) -> BitSequence:
    """Assemble and stuff a data frame.

    Stuffing covers SOF through the CRC sequence; the CRC delimiter, ACK
    field and EOF are fixed-form and sent unstuffed. The ACK slot is left
    recessive since no receiver is modelled.
    """
    if frame.dlc > 8:
        raise ValueError("dlc must be <= 8")
    f = frame_fields(frame)
    region = f["arbitration_control"] + f["data"] + f["crc"]
    stuffed, positions = stuff(region)
    return BitSequence(tuple(stuffed + f["trailer"]), tuple(positions), len(stuffed))


def decode_stuffed_region(seq: BitSequence) -> list[int]:
    """Recover the unstuffed SOF..trailer bits from an encoded sequence."""
    end = seq.stuffed_end if seq.stuffed_end is not None else len(seq.bits)
    return destuff(seq.bits[:end]) + list(seq.bits[end:])


def max_stuff_bits(dlc: int) -> int:
    """Worst-case stuff-bit count for a standard data frame with ``dlc`` bytes."""
    return (34 + 8 * dlc - 1) // 4


def render_waveform(bits, cfg: SignalingConfig | None = None) -> Waveform:
    """Ideal rectangular differential waveform, one plateau per bit."""
    cfg = cfg or SignalingConfig()
    if isinstance(bits, BitSequence):
        bits = bits.bits
    levels = np.where(np.asarray(bits, dtype=np.int8) == DOMINANT, cfg.v_dom_diff, cfg.v_rec_diff)
    samples = np.repeat(levels.astype(np.float64), cfg.samples_per_bit)
    return Waveform(samples, cfg.sample_rate_hz, {"bitrate_bps": cfg.bitrate_bps})

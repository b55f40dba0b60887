"""On-disk formats: manifest JSON, raw-record CSV and feature CSV.

CSV artifacts start with ``#`` comment lines of ``key=value`` pairs that
carry the schema version, seed and the hash of the producing config.
Floats are written with 17 significant digits so they round-trip exactly.
"""

from __future__ import annotations

import copy
import csv
import hashlib
import json
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from .canframe import CanFrame, SignalingConfig
from .channelsim import (
    ChannelProfile,
    EcuProfile,
    FAMILIES,
    LENGTHS_M,
    RecordSet,
    SimConfig,
    default_channels,
    default_ecus,
    default_frame,
)
from .features import FEATURE_NAMES
from .mlp import CHANNEL_HIDDEN, ECU_HIDDEN

SCHEMA = 1
LABEL_COLUMNS = ("ecu_id", "channel_id")


class ConfigError(ValueError):
    """Invalid manifest or artifact; ``field`` names the offending entry."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


def config_hash(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# -- manifest ----------------------------------------------------------------

DEFAULT_TRAINING = {
    "channel": {"hidden_layer_sizes": list(CHANNEL_HIDDEN)},
    "ecu": {"hidden_layer_sizes": list(ECU_HIDDEN)},
}
TRAIN_DEFAULTS = {"max_epochs": 2000, "grad_tol": 1e-7, "sigma0": 1e-4, "lambda0": 1e-6}


def default_manifest() -> dict:
    """Full-scale manifest: 4 ECUs x 18 channels, 3600 records per setting."""
    frame = default_frame()
    return {
        "schema": SCHEMA,
        "seed": 0,
        "simulation": {
            "records_per_class": 3600,
            "window_len": 40,
            "idle_bits": 3,
            "include_trailer": False,
            "signaling": asdict(SignalingConfig()),
            "frame": {"id": hex(frame.id), "data": frame.data.hex().upper()},
            "ecus": "default",
            "channels": {"families": list(FAMILIES), "lengths_m": list(LENGTHS_M)},
        },
        "features": {"n_bins": 10, "k": 11},
        "split": {"train_frac": 0.65, "stratify": True},
        "training": copy.deepcopy(DEFAULT_TRAINING),
    }


def load_manifest(path) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError("manifest", f"file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError("manifest", f"invalid JSON: {exc}") from None
    return normalize_manifest(doc)


def _merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for k, v in override.items():
        out[k] = _merge(base[k], v) if isinstance(v, dict) and isinstance(base.get(k), dict) else v
    return out


def normalize_manifest(doc: dict) -> dict:
    """Fill defaults and validate. Returns the effective manifest."""
    if not isinstance(doc, dict):
        raise ConfigError("manifest", "top level must be a JSON object")
    if doc.get("schema") != SCHEMA:
        raise ConfigError("schema", f"unsupported schema version {doc.get('schema')!r}")
    m = _merge(default_manifest(), doc)
    known = {"schema", "seed", "simulation", "features", "split", "training", "paths"}
    for key in m:
        if key not in known:
            raise ConfigError(key, "unknown manifest field")
    seed = m["seed"]
    if not isinstance(seed, int) or isinstance(seed, bool) or not 0 <= seed < 1 << 64:
        raise ConfigError("seed", "must be an unsigned 64-bit integer")
    sim_config(m)  # validates the simulation block
    feat = m["features"]
    for key in ("n_bins", "k"):
        if not isinstance(feat.get(key), int) or feat[key] < (2 if key == "n_bins" else 1):
            raise ConfigError(f"features.{key}", "must be a positive integer")
    frac = m["split"].get("train_frac")
    if not isinstance(frac, (int, float)) or not 0 < frac < 1:
        raise ConfigError("split.train_frac", "must be in (0, 1)")
    paths = m.get("paths", {})
    if not isinstance(paths, dict) or not all(isinstance(v, str) for v in paths.values()):
        raise ConfigError("paths", "must be an object of string paths")
    if set(paths) - {"out"}:
        raise ConfigError(f"paths.{sorted(set(paths) - {'out'})[0]}", "unknown field")
    for task in ("channel", "ecu"):
        if task not in m["training"]:
            raise ConfigError(f"training.{task}", "missing")
        train_config(m, task)
    return m


def _build(cls, raw, field_name):
    if not isinstance(raw, dict):
        raise ConfigError(field_name, "must be an object")
    names = {f.name for f in fields(cls)}
    unknown = set(raw) - names
    if unknown:
        raise ConfigError(f"{field_name}.{sorted(unknown)[0]}", "unknown field")
    try:
        return cls(**raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(field_name, str(exc)) from None


def _profiles(spec, field_name, kind):
    if spec == "default":
        return default_ecus() if kind == "ecu" else default_channels()
    if kind == "channel" and isinstance(spec, dict):
        fams = spec.get("families", list(FAMILIES))
        lens = spec.get("lengths_m", list(LENGTHS_M))
        bad = [f for f in fams if f not in FAMILIES]
        if bad:
            raise ConfigError(f"{field_name}.families", f"unknown family {bad[0]!r}")
        if not lens or any(not isinstance(L, (int, float)) or L <= 0 for L in lens):
            raise ConfigError(f"{field_name}.lengths_m", "must be a non-empty list of positive lengths")
        return default_channels(fams, [float(L) for L in lens])
    if not isinstance(spec, list) or not spec:
        raise ConfigError(field_name, "must be 'default' or a non-empty list of profiles")
    cls = EcuProfile if kind == "ecu" else ChannelProfile
    out = []
    for i, raw in enumerate(spec):
        raw = dict(raw) if isinstance(raw, dict) else raw
        if kind == "channel" and isinstance(raw, dict) and raw.get("taps") is not None:
            raw["taps"] = tuple(raw["taps"])
        out.append(_build(cls, raw, f"{field_name}[{i}]"))
    return out


def sim_config(manifest: dict) -> SimConfig:
    sim = manifest["simulation"]
    try:
        frame = CanFrame.from_hex(sim["frame"]["id"], sim["frame"].get("data", ""))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError("simulation.frame", str(exc)) from None
    signaling = _build(SignalingConfig, sim["signaling"], "simulation.signaling")
    ecus = _profiles(sim["ecus"], "simulation.ecus", "ecu")
    channels = _profiles(sim["channels"], "simulation.channels", "channel")
    for key in ("records_per_class", "window_len", "idle_bits"):
        if not isinstance(sim.get(key), int) or isinstance(sim.get(key), bool):
            raise ConfigError(f"simulation.{key}", "must be an integer")
    fs = signaling.sample_rate_hz
    for i, ch in enumerate(channels):
        try:
            ch.impulse_response(fs)
        except ValueError as exc:
            raise ConfigError(f"simulation.channels[{i}]", str(exc)) from None
    for i, ecu in enumerate(ecus):
        if min(ecu.rise_time_s, ecu.fall_time_s) < 2.0 / fs:
            raise ConfigError(f"simulation.ecus[{i}]", "rise/fall time below two sample periods")
    try:
        return SimConfig(
            ecus=ecus,
            channels=channels,
            frame=frame,
            records_per_class=sim["records_per_class"],
            window_len=sim["window_len"],
            rng_seed=manifest["seed"],
            signaling=signaling,
            idle_bits=sim["idle_bits"],
            include_trailer=bool(sim["include_trailer"]),
        )
    except ValueError as exc:
        raise ConfigError("simulation", str(exc)) from None


def train_config(manifest: dict, task: str) -> dict:
    """Effective training settings for ``task``."""
    raw = manifest["training"].get(task, {})
    if not isinstance(raw, dict):
        raise ConfigError(f"training.{task}", "must be an object")
    cfg = {"hidden_layer_sizes": DEFAULT_TRAINING[task]["hidden_layer_sizes"], **TRAIN_DEFAULTS, **raw}
    unknown = set(cfg) - {"hidden_layer_sizes", *TRAIN_DEFAULTS}
    if unknown:
        raise ConfigError(f"training.{task}.{sorted(unknown)[0]}", "unknown field")
    hl = cfg["hidden_layer_sizes"]
    if not isinstance(hl, list) or not all(isinstance(h, int) and h >= 1 for h in hl):
        raise ConfigError(f"training.{task}.hidden_layer_sizes", "must be a list of positive integers")
    if not isinstance(cfg["max_epochs"], int) or cfg["max_epochs"] < 1:
        raise ConfigError(f"training.{task}.max_epochs", "must be a positive integer")
    for key in ("grad_tol", "sigma0", "lambda0"):
        if not isinstance(cfg[key], (int, float)) or not cfg[key] > 0:
            raise ConfigError(f"training.{task}.{key}", "must be positive")
    return cfg


# -- CSV artifacts -----------------------------------------------------------


def _fmt(v) -> str:
    return "%.17g" % v


def _write_header(fh, kind: str, meta: dict):
    fh.write(f"# canprint {kind} schema={SCHEMA}\n")
    for k in sorted(meta):
        fh.write(f"# {k}={meta[k]}\n")


def _read_table(path, kind: str):
    meta = {}
    header = None
    rows = []
    with open(path, newline="") as fh:
        for line in fh:
            if line.startswith("#"):
                body = line[1:].strip()
                if body.startswith("canprint "):
                    parts = body.split()
                    if parts[1] != kind:
                        raise ConfigError(str(path), f"expected a {kind} file, found {parts[1]}")
                    meta["schema"] = parts[2].split("=", 1)[1]
                elif "=" in body:
                    k, v = body.split("=", 1)
                    meta[k.strip()] = v.strip()
                continue
            break
        else:
            line = ""
        if meta.get("schema") != str(SCHEMA):
            raise ConfigError(str(path), f"missing or unsupported {kind} schema")
        reader = csv.reader([line], strict=True)
        header = next(reader)
        rows = list(csv.reader(fh))
    return meta, header, rows


def write_records(path, records: RecordSet, meta: dict) -> None:
    meta = {"sample_rate_hz": _fmt(records.sample_rate_hz), **meta}
    n = records.windows.shape[1]
    with open(path, "w", newline="") as fh:
        _write_header(fh, "records", meta)
        fh.write(",".join([*LABEL_COLUMNS, *(f"s{i}" for i in range(n))]) + "\n")
        for e, c, row in zip(records.ecu_ids, records.channel_ids, records.windows):
            fh.write(f"{e},{c}," + ",".join(map(_fmt, row.tolist())) + "\n")


def read_records(path) -> tuple[RecordSet, dict]:
    meta, header, rows = _read_table(path, "records")
    if tuple(header[:2]) != LABEL_COLUMNS:
        raise ConfigError(str(path), "records header must start with ecu_id,channel_id")
    if not rows:
        raise ConfigError(str(path), "no records")
    try:
        fs = float(meta["sample_rate_hz"])
        windows = np.array([[float(v) for v in r[2:]] for r in rows])
    except (KeyError, ValueError) as exc:
        raise ConfigError(str(path), f"malformed records: {exc}") from None
    rs = RecordSet(
        windows=windows,
        ecu_ids=np.array([r[0] for r in rows], dtype=object),
        channel_ids=np.array([r[1] for r in rows], dtype=object),
        sample_rate_hz=fs,
    )
    return rs, meta


def write_features(path, F, degenerate, ecu_ids, channel_ids, meta: dict) -> None:
    with open(path, "w", newline="") as fh:
        _write_header(fh, "features", meta)
        fh.write(",".join([*LABEL_COLUMNS, "degenerate", *FEATURE_NAMES]) + "\n")
        for e, c, d, row in zip(ecu_ids, channel_ids, degenerate, F):
            fh.write(f"{e},{c},{int(d)}," + ",".join(map(_fmt, row.tolist())) + "\n")


def read_features(path):
    """Returns ``(F, degenerate, ecu_ids, channel_ids, meta)``."""
    meta, header, rows = _read_table(path, "features")
    expected = [*LABEL_COLUMNS, "degenerate", *FEATURE_NAMES]
    if header != expected:
        raise ConfigError(str(path), "feature header does not match the 11 named features")
    if not rows:
        raise ConfigError(str(path), "no feature rows")
    try:
        F = np.array([[float(v) for v in r[3:]] for r in rows])
        flags = np.array([bool(int(r[2])) for r in rows])
    except ValueError as exc:
        raise ConfigError(str(path), f"malformed feature rows: {exc}") from None
    ecu = np.array([r[0] for r in rows], dtype=object)
    chan = np.array([r[1] for r in rows], dtype=object)
    return F, flags, ecu, chan, meta

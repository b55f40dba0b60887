"""``canprint`` command-line interface.

Exit codes: 0 success (identify: MATCH), 2 configuration or schema error,
3 identify MISMATCH, 4 identify UNKNOWN, 5 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .channelsim import generate_dataset, load_capture_records, overlay
from .evalkit import LabeledDataset, Verdict, evaluate, identify, report, split_indices
from .featsel import JMISelector
from .features import FEATURE_NAMES, DegenerateSpectrumError, extract_many
from .formats import (
    ConfigError,
    config_hash,
    default_manifest,
    file_hash,
    load_manifest,
    normalize_manifest,
    read_features,
    read_records,
    sim_config,
    train_config,
    write_features,
    write_records,
)
from .mlp import MlpModel, SCGClassifier, TrainingError

log = logging.getLogger("canprint")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_MISMATCH = 3
EXIT_UNKNOWN = 4
EXIT_NUMERIC = 5

VERDICT_EXIT = {Verdict.MATCH: EXIT_OK, Verdict.MISMATCH: EXIT_MISMATCH, Verdict.UNKNOWN: EXIT_UNKNOWN}


def _dump(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _emit(text: str, out):
    if out is None or str(out) == "-":
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def _manifest(args) -> dict:
    m = load_manifest(args.manifest) if args.manifest else normalize_manifest(default_manifest())
    if getattr(args, "seed", None) is not None:
        m["seed"] = args.seed
        m = normalize_manifest(m)
    return m


def _out_dir(args, m) -> Path:
    return Path(args.out or m.get("paths", {}).get("out") or ".")


def _labels(chan, ecu, task):
    col = chan if task == "channel" else ecu
    names = list(dict.fromkeys(col.tolist()))
    index = {n: i for i, n in enumerate(names)}
    return np.array([index[v] for v in col.tolist()], dtype=np.int64), names


# -- commands ----------------------------------------------------------------


def cmd_simulate(args) -> int:
    m = _manifest(args)
    cfg = sim_config(m)
    out = _out_dir(args, m)
    out.mkdir(parents=True, exist_ok=True)
    chash = config_hash(m)
    records = generate_dataset(cfg)
    meta = {"seed": m["seed"], "config_sha256": chash, "window_len": cfg.window_len}
    write_records(out / "records.csv", records, meta)
    counts = {}
    for e, c in zip(records.ecu_ids.tolist(), records.channel_ids.tolist()):
        counts[f"{e}|{c}"] = counts.get(f"{e}|{c}", 0) + 1
    summary = {
        "schema": 1,
        "seed": m["seed"],
        "config_sha256": chash,
        "records": len(records),
        "window_len": cfg.window_len,
        "sample_rate_hz": cfg.signaling.sample_rate_hz,
        "ecu_classes": [e.ecu_id for e in cfg.ecus],
        "channel_classes": [c.channel_id for c in cfg.channels],
        "per_class_counts": counts,
        "records_sha256": file_hash(out / "records.csv"),
        "effective_config": m,
    }
    (out / "summary.json").write_text(_dump(summary))
    times, cols = overlay(cfg, n_bits=args.overlay_bits)
    table = np.column_stack([times, *cols.values()])
    with open(out / "overlay.csv", "w") as fh:
        fh.write(",".join(["time_s", *cols]) + "\n")
        for row in table:
            fh.write(",".join("%.17g" % v for v in row) + "\n")
    log.info("wrote %d records to %s", len(records), out / "records.csv")
    return EXIT_OK


def cmd_extract(args) -> int:
    records, meta = read_records(args.records)
    F, flags = extract_many(records.windows, records.sample_rate_hz)
    fmeta = {
        "sample_rate_hz": meta["sample_rate_hz"],
        "seed": meta.get("seed", ""),
        "config_sha256": meta.get("config_sha256", ""),
        "records_sha256": file_hash(args.records),
        "degenerate_rows": int(flags.sum()),
    }
    write_features(args.out, F, flags, records.ecu_ids, records.channel_ids, fmeta)
    if flags.any():
        log.warning("%d windows had zero spread; their higher moments are reported as 0", flags.sum())
    return EXIT_OK


def cmd_rank(args) -> int:
    F, _, ecu, chan, meta = read_features(args.features)
    y, names = _labels(chan, ecu, args.task)
    k = min(args.k, F.shape[1])
    sel = JMISelector(k=k, n_bins=args.bins).fit(F, y)
    r = sel.ranking_
    doc = {
        "schema": 1,
        "task": args.task,
        "order": r.order,
        "features": [FEATURE_NAMES[i] for i in r.order],
        "scores": r.scores,
        "n_bins": r.n_bins,
        "k": k,
        "features_sha256": file_hash(args.features),
        "seed": meta.get("seed", ""),
        "config_sha256": meta.get("config_sha256", ""),
    }
    _emit(_dump(doc), args.out)
    return EXIT_OK


def cmd_train(args) -> int:
    m = _manifest(args)
    tcfg = train_config(m, args.task)
    seed = m["seed"]
    F, _, ecu, chan, meta = read_features(args.features)
    y, names = _labels(chan, ecu, args.task)
    if len(names) < 2:
        raise ConfigError("task", f"{args.task} task needs at least 2 classes, found {names}")
    split = {"train_frac": m["split"]["train_frac"], "stratify": m["split"]["stratify"], "seed": seed}
    tr, _ = split_indices(y, split["train_frac"], seed, split["stratify"])
    clf = SCGClassifier(
        hidden_layer_sizes=tuple(tcfg["hidden_layer_sizes"]),
        max_epochs=tcfg["max_epochs"],
        grad_tol=tcfg["grad_tol"],
        sigma0=tcfg["sigma0"],
        lambda0=tcfg["lambda0"],
        random_state=seed,
    ).fit(F[tr], y[tr])
    doc = clf.model_.to_dict()
    doc.update(
        task=args.task,
        class_names=names,
        feature_names=list(FEATURE_NAMES),
        split=split,
        train_config=tcfg,
        features_sha256=file_hash(args.features),
        config_sha256=config_hash({"training": tcfg, "split": split, "features": meta.get("config_sha256", "")}),
    )
    out = Path(args.out)
    out.write_text(_dump(doc))
    trace = clf.trace_
    trace_path = Path(args.trace) if args.trace else out.with_suffix(".trace.csv")
    with open(trace_path, "w") as fh:
        fh.write("epoch,loss,grad_norm,lambda\n")
        for row in zip(trace.epochs, trace.loss, trace.grad_norm, trace.lam):
            fh.write("%d,%.17g,%.17g,%.17g\n" % row)
    log.info(
        "%s model: %d epochs, loss %.4g, stop: %s",
        args.task, trace.epochs_run, trace.loss[-1], trace.stop_reason,
    )
    return EXIT_OK


def _load_model(path) -> tuple[MlpModel, dict]:
    try:
        doc = json.loads(Path(path).read_text())
        return MlpModel.from_dict(doc), doc
    except FileNotFoundError:
        raise ConfigError("model", f"file not found: {path}") from None
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError("model", f"invalid model document: {exc}") from None


def cmd_eval(args) -> int:
    model, doc = _load_model(args.model)
    F, _, ecu, chan, _ = read_features(args.features)
    task = doc["task"]
    col = (chan if task == "channel" else ecu).tolist()
    names = doc["class_names"]
    unknown = sorted(set(col) - set(names))
    if unknown:
        raise ConfigError("features", f"labels not known to the model: {unknown[:3]}")
    index = {n: i for i, n in enumerate(names)}
    y = np.array([index[v] for v in col], dtype=np.int64)
    if args.split == "all":
        rows = np.arange(y.size)
    else:
        s = doc["split"]
        tr, te = split_indices(y, s["train_frac"], s["seed"], s["stratify"])
        rows = tr if args.split == "train" else te
    cm = evaluate(model, LabeledDataset(F[rows], y[rows], names))
    extra = {"task": task, "split": args.split, "model_sha256": file_hash(args.model)}
    text = report(cm, args.format, **extra) if args.format == "json" else report(cm, args.format)
    _emit(text, args.out)
    if args.format != "json":
        log.info("%s accuracy (%s split): %.2f%%", task, args.split, 100 * cm.accuracy)
    return EXIT_OK


def cmd_identify(args) -> int:
    model, doc = _load_model(args.model)
    names = doc.get("class_names") or [str(i) for i in range(model.n_classes)]
    if args.values is not None:
        x = np.array([float(v) for v in args.values.split(",")])
    elif args.features is not None:
        F, *_ = read_features(args.features)
        x = F[_row(args.row, F.shape[0])]
    elif args.record is not None:
        records, _ = read_records(args.record)
        i = _row(args.row, len(records))
        x = extract_many(records.windows[i : i + 1], records.sample_rate_hz)[0][0]
    else:
        raise ConfigError("input", "give one of --values, --features or --record")
    if args.claim in names:
        claimed = names.index(args.claim)
    elif args.claim.isdigit() and int(args.claim) < len(names):
        claimed = int(args.claim)
    else:
        raise ConfigError("claim", f"unknown class {args.claim!r}; known: {names}")
    v = identify(model, x, claimed, args.threshold)
    out = v.to_dict(names)
    out["threshold"] = args.threshold
    _emit(_dump(out), args.out)
    return VERDICT_EXIT[v.verdict]


def _row(row, n):
    if not 0 <= row < n:
        raise ConfigError("row", f"row {row} outside 0..{n - 1}")
    return row


def cmd_import_scope(args) -> int:
    records = load_capture_records(
        args.capture, args.rate, args.window_len, args.ecu, args.channel, args.threshold_v
    )
    meta = {"source_sha256": file_hash(args.capture), "window_len": args.window_len}
    write_records(args.out, records, meta)
    return EXIT_OK


def cmd_pipeline(args) -> int:
    m = _manifest(args)
    out = _out_dir(args, m)
    ns = argparse.Namespace
    cmd_simulate(ns(manifest=args.manifest, seed=args.seed, out=out, overlay_bits=args.overlay_bits))
    cmd_extract(ns(records=out / "records.csv", out=out / "features.csv"))
    summary = json.loads((out / "summary.json").read_text())
    for task, key in (("channel", "channel_classes"), ("ecu", "ecu_classes")):
        if len(summary[key]) < 2:
            log.info("skipping %s task: fewer than 2 classes", task)
            continue
        cmd_rank(ns(features=out / "features.csv", task=task, k=m["features"]["k"],
                    bins=m["features"]["n_bins"], out=out / f"ranking_{task}.json"))
        cmd_train(ns(manifest=args.manifest, seed=args.seed, features=out / "features.csv",
                     task=task, out=out / f"model_{task}.json", trace=None))
        for split in ("test", "train"):
            cmd_eval(ns(model=out / f"model_{task}.json", features=out / "features.csv",
                        split=split, format="json", out=out / f"report_{task}_{split}.json"))
    return EXIT_OK


# -- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="canprint", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="synthesize raw records from a manifest")
    s.add_argument("--manifest")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", help="output directory (default: manifest paths.out, else .)")
    s.add_argument("--overlay-bits", type=int, default=12)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("extract", help="raw records CSV -> features CSV")
    s.add_argument("records")
    s.add_argument("--out", default="features.csv")
    s.set_defaults(func=cmd_extract)

    s = sub.add_parser("rank", help="JMI feature ranking")
    s.add_argument("features")
    s.add_argument("--task", choices=("channel", "ecu"), default="channel")
    s.add_argument("--k", type=int, default=11)
    s.add_argument("--bins", type=int, default=10)
    s.add_argument("--out")
    s.set_defaults(func=cmd_rank)

    s = sub.add_parser("train", help="train an SCG classifier on the train split")
    s.add_argument("features")
    s.add_argument("--task", choices=("channel", "ecu"), required=True)
    s.add_argument("--manifest")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", default="model.json")
    s.add_argument("--trace", help="trace CSV path (default: <out>.trace.csv)")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="confusion-matrix report for a trained model")
    s.add_argument("model")
    s.add_argument("features")
    s.add_argument("--split", choices=("test", "train", "all"), default="test")
    s.add_argument("--format", choices=("text", "csv", "json"), default="text")
    s.add_argument("--out")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("identify", help="check a packet against its claimed source")
    s.add_argument("model")
    s.add_argument("--claim", required=True, help="claimed class name or index")
    s.add_argument("--values", help="comma-separated 11-feature vector")
    s.add_argument("--features", help="features CSV (use with --row)")
    s.add_argument("--record", help="raw records CSV (use with --row)")
    s.add_argument("--row", type=int, default=0)
    s.add_argument("--threshold", type=float, default=0.9)
    s.add_argument("--out")
    s.set_defaults(func=cmd_identify)

    s = sub.add_parser("import-scope", help="oscilloscope time,volts CSV -> raw records CSV")
    s.add_argument("capture")
    s.add_argument("--rate", type=float, default=10e6, help="resampling rate in Hz")
    s.add_argument("--window-len", type=int, default=40)
    s.add_argument("--ecu", default="unknown")
    s.add_argument("--channel", default="unknown")
    s.add_argument("--threshold-v", type=float)
    s.add_argument("--out", default="records.csv")
    s.set_defaults(func=cmd_import_scope)

    s = sub.add_parser("pipeline", help="simulate, extract, rank, train and evaluate")
    s.add_argument("--manifest")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", help="output directory (default: manifest paths.out, else .)")
    s.add_argument("--overlay-bits", type=int, default=12)
    s.set_defaults(func=cmd_pipeline)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"canprint: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TrainingError, DegenerateSpectrumError, FloatingPointError) as exc:
        print(f"canprint: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, ValueError) as exc:
        print(f"canprint: invalid input: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

"""Train/test splitting, confusion matrices and source identification.

Confusion matrices are oriented with **predicted classes as rows and
target classes as columns**. Precision is therefore row-wise and recall
column-wise.
"""

from __future__ import annotations

import csv
import enum
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .mlp import MlpModel, predict

REPORT_SCHEMA = 1


@dataclass
class LabeledDataset:
    x: np.ndarray
    y: np.ndarray
    class_names: list = field(default_factory=list)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.x.ndim != 2 or self.x.shape[0] != self.y.size:
            raise ValueError(f"{self.x.shape[0]} rows but {self.y.size} labels")
        if not self.class_names:
            self.class_names = [str(c) for c in range(int(self.y.max()) + 1 if self.y.size else 0)]
        if self.y.size and (self.y.min() < 0 or self.y.max() >= len(self.class_names)):
            raise ValueError(f"labels must lie in [0, {len(self.class_names)})")

    def __len__(self):
        return self.y.size

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def subset(self, idx) -> "LabeledDataset":
        return LabeledDataset(self.x[idx], self.y[idx], list(self.class_names))


def split_indices(y, train_frac: float = 0.65, seed=0, stratify: bool = True):
    """Index arrays ``(train, test)``.

    Stratified mode rounds each class's train share to the nearest row,
    keeping at least one row on each side. Both arrays come back sorted.
    """
    if not 0 < train_frac < 1:
        raise ValueError("train_frac must be in (0, 1)")
    y = np.asarray(y)
    rng = np.random.default_rng(seed)
    if not stratify:
        if y.size < 2:
            raise ValueError("need at least 2 rows to split")
        perm = rng.permutation(y.size)
        n_tr = min(max(int(round(train_frac * y.size)), 1), y.size - 1)
        return np.sort(perm[:n_tr]), np.sort(perm[n_tr:])
    train, test = [], []
    for c in np.unique(y):
        rows = np.flatnonzero(y == c)
        if rows.size < 2:
            raise ValueError(f"class {c!r} has {rows.size} row(s); at least 2 are needed to split")
        rows = rng.permutation(rows)
        n_tr = min(max(int(np.floor(train_frac * rows.size + 0.5)), 1), rows.size - 1)
        train.append(rows[:n_tr])
        test.append(rows[n_tr:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(test))


def split(ds: LabeledDataset, train_frac: float = 0.65, seed=0, stratify: bool = True):
    tr, te = split_indices(ds.y, train_frac, seed, stratify)
    return ds.subset(tr), ds.subset(te)


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # counts[predicted, target]
    class_names: list = field(default_factory=list)

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        n = self.counts.shape[0]
        if self.counts.shape != (n, n):
            raise ValueError("counts must be square")
        if not self.class_names:
            self.class_names = [str(i) for i in range(n)]
        if len(self.class_names) != n:
            raise ValueError("one class name per row is required")

    @classmethod
    def from_labels(cls, predicted, target, n_classes: int, class_names=None):
        predicted = np.asarray(predicted, dtype=np.int64)
        target = np.asarray(target, dtype=np.int64)
        if predicted.shape != target.shape:
            raise ValueError("predicted and target lengths differ")
        for name, arr in (("predicted", predicted), ("target", target)):
            if arr.size and (arr.min() < 0 or arr.max() >= n_classes):
                raise ValueError(f"{name} label outside [0, {n_classes})")
        counts = np.zeros((n_classes, n_classes), dtype=np.int64)
        np.add.at(counts, (predicted, target), 1)
        return cls(counts, list(class_names or []))

    @property
    def n_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.counts) / self.total) if self.total else 0.0

    def _ratio(self, axis):
        sums = self.counts.sum(axis=axis)
        diag = np.diag(self.counts)
        empty = sums == 0
        return np.where(empty, 0.0, diag / np.where(empty, 1, sums)), empty

    @property
    def precision(self) -> np.ndarray:
        return self._ratio(axis=1)[0]

    @property
    def recall(self) -> np.ndarray:
        return self._ratio(axis=0)[0]

    @property
    def precision_undefined(self) -> np.ndarray:
        """Classes never predicted (precision reported as 0)."""
        return self._ratio(axis=1)[1]

    @property
    def recall_undefined(self) -> np.ndarray:
        """Classes absent from the targets (recall reported as 0)."""
        return self._ratio(axis=0)[1]

    def __eq__(self, other):
        if not isinstance(other, ConfusionMatrix):
            return NotImplemented
        return np.array_equal(self.counts, other.counts) and self.class_names == other.class_names


def evaluate(model: MlpModel, test: LabeledDataset) -> ConfusionMatrix:
    if model.n_classes != test.n_classes:
        raise ValueError(
            f"model has {model.n_classes} outputs but the dataset has {test.n_classes} classes"
        )
    pred, _ = predict(model, test.x)
    return ConfusionMatrix.from_labels(pred, test.y, test.n_classes, test.class_names)


class Verdict(str, enum.Enum):
    MATCH = "MATCH"
    MISMATCH = "MISMATCH"
    UNKNOWN = "UNKNOWN"


@dataclass(frozen=True)
class IdentityVerdict:
    claimed_class: int
    predicted_class: int
    confidence: float
    verdict: Verdict

    def to_dict(self, class_names=None) -> dict:
        d = {
            "schema": REPORT_SCHEMA,
            "claimed_class": self.claimed_class,
            "predicted_class": self.predicted_class,
            "confidence": self.confidence,
            "verdict": self.verdict.value,
        }
        if class_names:
            d["claimed_name"] = class_names[self.claimed_class]
            d["predicted_name"] = class_names[self.predicted_class]
        return d


def decide(claimed: int, predicted: int, confidence: float, threshold: float) -> Verdict:
    if confidence < threshold:
        return Verdict.UNKNOWN
    return Verdict.MATCH if predicted == claimed else Verdict.MISMATCH


def identify(model: MlpModel, feature_vector, claimed_class: int, threshold: float = 0.9) -> IdentityVerdict:
    """Check whether a packet's fingerprint pairs with its claimed source.

    Below ``threshold`` confidence the verdict is UNKNOWN whatever the
    prediction; otherwise MATCH or MISMATCH.
    """
    x = np.asarray(feature_vector, dtype=np.float64).ravel()
    if x.size != model.n_inputs:
        raise ValueError(f"feature vector has {x.size} entries, model expects {model.n_inputs}")
    if not 0 <= claimed_class < model.n_classes:
        raise ValueError(f"claimed class {claimed_class} outside [0, {model.n_classes})")
    label, prob = predict(model, x)
    pred, conf = int(label[0]), float(prob[0])
    return IdentityVerdict(int(claimed_class), pred, conf, decide(claimed_class, pred, conf, threshold))


def identify_many(model: MlpModel, X, claimed, threshold: float = 0.9) -> list[IdentityVerdict]:
    labels, probs = predict(model, X)
    return [
        IdentityVerdict(int(c), int(p), float(q), decide(int(c), int(p), float(q), threshold))
        for c, p, q in zip(np.asarray(claimed).ravel(), labels, probs)
    ]


# -- reports -----------------------------------------------------------------


def cell(count: int, total: int) -> str:
    """``"176 14.0%"`` style cell: count and share of all evaluated rows."""
    pct = 100.0 * count / total if total else 0.0
    return f"{count} {pct:.1f}%"


def _pct(x: float) -> str:
    return f"{100.0 * x:.1f}%"


def report(cm: ConfusionMatrix, fmt: str = "text", **extra) -> str:
    """Render as ``text``, ``csv`` or ``json``."""
    if fmt == "text":
        return _report_text(cm)
    if fmt == "csv":
        return _report_csv(cm)
    if fmt == "json":
        return _report_json(cm, **extra)
    raise ValueError(f"unknown report format {fmt!r}")


def _report_text(cm: ConfusionMatrix) -> str:
    names = cm.class_names
    header = ["pred \\ target", *names, "precision"]
    rows = []
    for i, name in enumerate(names):
        rows.append(
            [name, *(cell(int(c), cm.total) for c in cm.counts[i]), _pct(cm.precision[i])]
        )
    rows.append(["recall", *(_pct(r) for r in cm.recall), _pct(cm.accuracy)])
    widths = [max(len(str(r[j])) for r in [header, *rows]) for j in range(len(header))]
    lines = ["  ".join(str(v).rjust(w) for v, w in zip(r, widths)) for r in [header, *rows]]
    lines.append(f"overall accuracy: {_pct(cm.accuracy)} ({np.trace(cm.counts)}/{cm.total})")
    flagged = [n for n, u in zip(names, cm.precision_undefined | cm.recall_undefined) if u]
    if flagged:
        lines.append("undefined precision/recall reported as 0 for: " + ", ".join(flagged))
    return "\n".join(lines) + "\n"


def _report_csv(cm: ConfusionMatrix) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["predicted", *cm.class_names, "precision"])
    for i, name in enumerate(cm.class_names):
        w.writerow([name, *map(int, cm.counts[i]), f"{cm.precision[i]:.6f}"])
    w.writerow(["recall", *(f"{r:.6f}" for r in cm.recall), f"{cm.accuracy:.6f}"])
    return buf.getvalue()


def parse_csv(text: str) -> ConfusionMatrix:
    """Inverse of ``report(cm, "csv")``."""
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0][0] != "predicted":
        raise ValueError("not a confusion-matrix CSV")
    names = rows[0][1:-1]
    n = len(names)
    counts = [[int(v) for v in r[1 : n + 1]] for r in rows[1 : n + 1]]
    return ConfusionMatrix(np.array(counts, dtype=np.int64).reshape(n, n), names)


def _report_json(cm: ConfusionMatrix, **extra) -> str:
    doc = {
        "schema": REPORT_SCHEMA,
        "orientation": "rows=predicted, columns=target",
        "class_names": cm.class_names,
        "counts": cm.counts.tolist(),
        "total": cm.total,
        "accuracy": cm.accuracy,
        "precision": cm.precision.tolist(),
        "recall": cm.recall.tolist(),
        "precision_undefined": cm.precision_undefined.tolist(),
        "recall_undefined": cm.recall_undefined.tolist(),
    }
    doc.update(extra)
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"

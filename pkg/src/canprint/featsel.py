"""Greedy joint-mutual-information (JMI) feature ranking.

Features are discretized into equal-width bins; mutual information is the
plug-in estimate in bits. After the most relevant feature, each step adds
the candidate ``f`` maximizing ``sum_{j in S} I((X_f, X_j); Y)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.feature_selection import SelectorMixin
from sklearn.utils.validation import check_is_fitted, check_X_y

from ._validation import check_labels


@dataclass(frozen=True)
class DiscretizedMatrix:
    columns: np.ndarray  # (n_rows, n_features) int labels in [0, n_bins)
    n_bins: int
    edges: list

    @property
    def n_features(self) -> int:
        return self.columns.shape[1]


@dataclass(frozen=True)
class RankingResult:
    order: list
    scores: list
    n_bins: int | None = None

    def to_json(self, **extra) -> str:
        doc = {"schema": 1, "order": self.order, "scores": self.scores, "n_bins": self.n_bins}
        doc.update(extra)
        return json.dumps(doc, sort_keys=True)


def discretize(features, n_bins: int = 10) -> DiscretizedMatrix:
    """Equal-width binning of every column over its own ``[min, max]``.

    The last bin is closed on the right. Constant columns map to bin 0.
    """
    if n_bins < 2:
        raise ValueError("n_bins must be >= 2")
    X = np.asarray(features, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if not np.all(np.isfinite(X)):
        raise ValueError("features must be finite")
    labels = np.zeros(X.shape, dtype=np.int64)
    edges = []
    for j in range(X.shape[1]):
        col = X[:, j]
        lo, hi = col.min(), col.max()
        if hi > lo:
            e = np.linspace(lo, hi, n_bins + 1)
            lab = np.floor((col - lo) / (hi - lo) * n_bins).astype(np.int64)
            labels[:, j] = np.minimum(lab, n_bins - 1)
        else:
            e = lo + np.arange(n_bins + 1, dtype=np.float64)
        edges.append(e)
    return DiscretizedMatrix(labels, n_bins, edges)


def _counts(x):
    _, inv, counts = np.unique(x, return_inverse=True, return_counts=True)
    return inv.ravel(), counts


def entropy(x) -> float:
    """Plug-in entropy in bits."""
    x = np.asarray(x)
    if x.size == 0:
        raise ValueError("empty input")
    _, counts = _counts(x)
    p = counts / x.size
    return float(-(p * np.log2(p)).sum())


def mutual_information(x, y) -> float:
    """Plug-in ``I(X;Y)`` in bits over observed cells.

    Cell ratios are formed from integer counts, so exactly independent
    contingency tables give exactly 0.
    """
    x = np.asarray(x)
    y = np.asarray(y)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"x and y must be 1-D of equal length, got {x.shape} and {y.shape}")
    n = x.size
    if n == 0:
        raise ValueError("empty input")
    xi, cx = _counts(x)
    yi, cy = _counts(y)
    joint = xi * cy.size + yi
    cells, cxy = np.unique(joint, return_counts=True)
    ca = cx[cells // cy.size]
    cb = cy[cells % cy.size]
    ratio = (cxy * n) / (ca * cb)
    return float(np.sum(cxy / n * np.log2(ratio)))


def joint_labels(a, b, n_bins: int) -> np.ndarray:
    """Encode the paired variable ``(a, b)`` as ``a * n_bins + b``."""
    return np.asarray(a, dtype=np.int64) * n_bins + np.asarray(b, dtype=np.int64)


def jmi_rank(features: DiscretizedMatrix, labels, k: int) -> RankingResult:
    """Greedy JMI forward selection of ``k`` features.

    Ties go to the lowest feature index.
    """
    D = features.columns
    n_rows, n_feat = D.shape
    y = check_labels(labels, n_rows)
    if not 1 <= k <= n_feat:
        raise ValueError(f"k must be in 1..{n_feat}, got {k}")

    relevance = np.array([mutual_information(D[:, f], y) for f in range(n_feat)])
    first = int(np.argmax(relevance))
    order, scores = [first], [float(relevance[first])]
    accum = np.zeros(n_feat)
    remaining = [f for f in range(n_feat) if f != first]
    while len(order) < k:
        last = order[-1]
        for f in remaining:
            accum[f] += mutual_information(joint_labels(D[:, f], D[:, last], features.n_bins), y)
        best = max(remaining, key=lambda f: (accum[f], -f))
        order.append(best)
        scores.append(float(accum[best]))
        remaining.remove(best)
    return RankingResult(order, scores, features.n_bins)


class JMISelector(SelectorMixin, BaseEstimator):
    """Keep the ``k`` top-ranked features by greedy JMI.

    Parameters
    ----------
    k : int
        Number of features to keep.
    n_bins : int
        Equal-width bins per feature for the MI estimates.
    """

    def __init__(self, k: int = 11, n_bins: int = 10):
        self.k = k
        self.n_bins = n_bins

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        _, y_idx = np.unique(y, return_inverse=True)
        self.ranking_ = jmi_rank(discretize(X, self.n_bins), y_idx, min(self.k, X.shape[1]))
        self.n_features_in_ = X.shape[1]
        return self

    def _get_support_mask(self):
        check_is_fitted(self, "ranking_")
        mask = np.zeros(self.n_features_in_, dtype=bool)
        mask[self.ranking_.order] = True
        return mask

"""Input validation shared by the estimators."""

from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array


def check_windows(X, min_len: int = 1) -> np.ndarray:
    """2-D float64 array of raw windows, one per row."""
    X = check_array(X, dtype=np.float64, ensure_2d=True)
    if X.shape[1] < min_len:
        raise ValueError(f"windows need at least {min_len} samples, got {X.shape[1]}")
    return X


def check_labels(y, n_rows: int | None = None) -> np.ndarray:
    """1-D integer label vector, optionally length-checked."""
    y = np.asarray(y)
    if y.ndim != 1:
        raise ValueError(f"labels must be 1-D, got shape {y.shape}")
    if n_rows is not None and y.size != n_rows:
        raise ValueError(f"{y.size} labels for {n_rows} rows")
    if y.size and not np.issubdtype(y.dtype, np.integer):
        if not np.all(np.equal(np.mod(y, 1), 0)):
            raise ValueError("labels must be integers")
        y = y.astype(np.int64)
    return y.astype(np.int64, copy=False)


def encode_classes(y) -> tuple[np.ndarray, list]:
    """Map arbitrary labels to 0..k-1 in first-appearance order."""
    y = np.asarray(y)
    names = list(dict.fromkeys(y.tolist()))
    index = {v: i for i, v in enumerate(names)}
    return np.fromiter((index[v] for v in y.tolist()), dtype=np.int64, count=y.size), names

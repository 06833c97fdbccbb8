"""k-nearest-neighbour classification on learned representations."""

from __future__ import annotations

import numpy as np

from .errors import DimError

METRICS = ("cosine", "euclidean")


def _similarity(train, test, metric):
    if metric == "cosine":
        tn = train / np.maximum(np.linalg.norm(train, axis=1, keepdims=True), 1e-300)
        sn = test / np.maximum(np.linalg.norm(test, axis=1, keepdims=True), 1e-300)
        return sn @ tn.T
    if metric == "euclidean":
        d2 = (test ** 2).sum(1)[:, None] - 2 * test @ train.T + (train ** 2).sum(1)[None, :]
        return -d2
    raise ValueError(f"unknown metric {metric!r}; choose from {METRICS}")


def knn_predict(train, train_labels, test, k: int = 4, metric: str = "cosine", chunk: int = 1024):
    """Majority vote over the k most similar training rows.

    Vote ties go to the tied class whose best neighbour ranks highest.
    Equal similarities are ordered by training-row index.
    """
    train = np.asarray(train, dtype=np.float64)
    test = np.asarray(test, dtype=np.float64)
    labels = np.asarray(train_labels)
    if train.ndim != 2 or test.ndim != 2 or train.shape[1] != test.shape[1]:
        raise DimError("train and test must be matrices with equal column counts")
    if labels.shape != (train.shape[0],):
        raise DimError("one label per training row required")
    if not 1 <= k <= train.shape[0]:
        raise ValueError(f"k must be in [1, {train.shape[0]}]")
    out = np.empty(test.shape[0], dtype=labels.dtype)
    for start in range(0, test.shape[0], chunk):
        sim = _similarity(train, test[start:start + chunk], metric)
        nearest = np.argsort(-sim, axis=1, kind="stable")[:, :k]
        for i, row in enumerate(nearest):
            votes = labels[row]
            classes, counts = np.unique(votes, return_counts=True)
            tied = set(classes[counts == counts.max()].tolist())
            out[start + i] = next(v for v in votes if v in tied)
    return out


def knn_error(train, train_labels, test, test_labels, k: int = 4, metric: str = "cosine") -> float:
    pred = knn_predict(train, train_labels, test, k, metric)
    return float(np.mean(pred != np.asarray(test_labels)))

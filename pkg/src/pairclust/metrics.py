"""Clustering accuracy (optimal one-to-one cluster/class mapping) and NMI."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels


def _labels(x, what):
    x = np.asarray(x)
    if x.ndim != 1 or len(x) == 0:
        raise ValueError(f"{what} must be a non-empty 1-d label array")
    if x.min() < 0:
        raise ValueError(f"{what} holds negative ids")
    return x.astype(np.int64)


@dataclass
class Contingency:
    counts: np.ndarray  # clusters x classes

    @classmethod
    def build(cls, pred, truth, num_clusters=None, num_classes=None) -> "Contingency":
        pred = _labels(pred, "pred")
        truth = _labels(truth, "truth")
        if len(pred) != len(truth):
            raise ValueError(f"length mismatch: {len(pred)} predictions, {len(truth)} labels")
        m = max(int(pred.max()) + 1, num_clusters or 0)
        k = max(int(truth.max()) + 1, num_classes or 0)
        counts = np.bincount(pred * k + truth, minlength=m * k).reshape(m, k)
        return cls(counts)

    @property
    def n(self) -> int:
        return int(self.counts.sum())

    @property
    def cluster_sizes(self):
        return self.counts.sum(axis=1)

    @property
    def class_sizes(self):
        return self.counts.sum(axis=0)


def hungarian_max(matrix):
    """Maximum-weight matching; returns ``(list of (row, col), value)``.

    Rectangular inputs are zero-padded to square and padded pairs dropped,
    so the matching has ``min(R, C)`` pairs.
    """
    w = np.asarray(matrix, dtype=np.float64)
    if w.ndim != 2:
        raise ValueError("expected a 2-d matrix")
    r, c = w.shape
    if r == 0 or c == 0:
        return [], 0.0
    if not np.all(np.isfinite(w)):
        raise ValueError("matrix entries must be finite")
    n = max(r, c)
    cost = np.zeros((n, n))
    cost[:r, :c] = w.max() - w
    cols = kernels.min_cost_assignment(cost)
    pairs = [(i, int(cols[i])) for i in range(r) if cols[i] < c]
    value = float(sum(w[i, j] for i, j in pairs))
    return pairs, value


def acc(pred, truth) -> float:
    """Fraction of samples whose cluster maps to their class under the best injective mapping."""
    table = Contingency.build(pred, truth)
    _, matched = hungarian_max(table.counts)
    return float(matched / table.n)


def _entropy(sizes, n):
    p = sizes[sizes > 0] / n
    return float(-np.sum(p * np.log(p)))


def nmi(pred, truth) -> float:
    """Mutual information over the geometric mean of the two entropies (0 if either is 0)."""
    table = Contingency.build(pred, truth)
    n = table.n
    h_pred = _entropy(table.cluster_sizes, n)
    h_true = _entropy(table.class_sizes, n)
    if h_pred == 0.0 or h_true == 0.0:
        return 0.0
    nz = table.counts > 0
    joint = table.counts[nz] / n
    outer = np.outer(table.cluster_sizes, table.class_sizes)[nz] / (n * n)
    mi = float(np.sum(joint * np.log(joint / outer)))
    return float(min(1.0, max(0.0, mi / np.sqrt(h_pred * h_true))))

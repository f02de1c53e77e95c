"""Independent oracles and stub similarity scorers shared by the tests."""

import itertools
import math

import numpy as np


def brute_force_assignment(w):
    """Max total weight over all injective row->column maps (rows <= cols) by enumeration."""
    w = np.asarray(w, dtype=float)
    r, c = w.shape
    if r > c:
        return brute_force_assignment(w.T)
    return max(sum(w[i, p[i]] for i in range(r)) for p in itertools.permutations(range(c), r))


def brute_force_acc(pred, truth):
    """ACC by enumerating every injective cluster->class (or class->cluster) mapping."""
    pred = list(pred)
    truth = list(truth)
    clusters = sorted(set(pred))
    classes = sorted(set(truth))
    best = 0
    if len(clusters) <= len(classes):
        for image in itertools.permutations(classes, len(clusters)):
            f = dict(zip(clusters, image))
            best = max(best, sum(f[p] == t for p, t in zip(pred, truth)))
    else:
        for image in itertools.permutations(clusters, len(classes)):
            g = dict(zip(classes, image))
            best = max(best, sum(g[t] == p for p, t in zip(pred, truth)))
    return best / len(truth)


def nmi_by_formula(pred, truth):
    """Mutual information / sqrt(H(pred) H(truth)) written out term by term."""
    n = len(truth)
    ks = sorted(set(pred))
    js = sorted(set(truth))
    size_k = {k: sum(1 for p in pred if p == k) for k in ks}
    size_j = {j: sum(1 for t in truth if t == j) for j in js}
    h_pred = -sum(size_k[k] / n * math.log(size_k[k] / n) for k in ks)
    h_true = -sum(size_j[j] / n * math.log(size_j[j] / n) for j in js)
    mi = 0.0
    for k in ks:
        for j in js:
            both = sum(1 for p, t in zip(pred, truth) if p == k and t == j)
            if both:
                mi += both / n * math.log(n * both / (size_k[k] * size_j[j]))
    if h_pred == 0 or h_true == 0:
        return 0.0
    return mi / math.sqrt(h_pred * h_true)


class LabelScorer:
    """Perfect similarity: looks each image up in the dataset it was built from."""

    def __init__(self, dataset):
        self._lookup = {row.tobytes(): int(y) for row, y in zip(dataset.images, dataset.labels)}

    def _label(self, image):
        return self._lookup[np.ascontiguousarray(image).tobytes()]

    def pair_probabilities(self, images, first, second):
        labels = np.array([self._label(im) for im in images])
        return (labels[np.asarray(first)] == labels[np.asarray(second)]).astype(float)


class ConstantScorer:
    def __init__(self, value):
        self.value = value

    def pair_probabilities(self, images, first, second):
        return np.full(len(first), float(self.value))


class RandomScorer:
    """Scores above 0.5 with probability ``p_similar`` regardless of the images."""

    def __init__(self, p_similar, seed=0):
        self.p_similar = p_similar
        self.rng = np.random.default_rng(seed)

    def pair_probabilities(self, images, first, second):
        u = self.rng.random(len(first))
        return u * 0.5 / (1.0 - self.p_similar)

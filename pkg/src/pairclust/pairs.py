"""Dense in-batch pair constraints and the similarity oracles that label them."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple, Optional, Protocol, Sequence

import numpy as np

SIMILAR = 1
DISSIMILAR = 0


class PairConstraint(NamedTuple):
    i: int
    j: int
    label: int


@dataclass(eq=False)
class PairConstraints:
    """Structure-of-arrays list of ``(i, j, label)`` with ``i < j``."""

    first: np.ndarray
    second: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.first = np.asarray(self.first, dtype=np.int64)
        self.second = np.asarray(self.second, dtype=np.int64)
        self.labels = np.asarray(self.labels, dtype=np.int8)
        if not (len(self.first) == len(self.second) == len(self.labels)):
            raise ValueError("index and label arrays differ in length")

    @classmethod
    def from_list(cls, items: Sequence[Sequence[int]]) -> "PairConstraints":
        arr = np.asarray(items, dtype=np.int64).reshape(-1, 3)
        return cls(arr[:, 0], arr[:, 1], arr[:, 2])

    def __len__(self):
        return len(self.labels)

    def __iter__(self):
        for a, b, l in zip(self.first.tolist(), self.second.tolist(), self.labels.tolist()):
            yield PairConstraint(a, b, l)

    def __eq__(self, other):
        if not isinstance(other, PairConstraints):
            return NotImplemented
        return (np.array_equal(self.first, other.first)
                and np.array_equal(self.second, other.second)
                and np.array_equal(self.labels, other.labels))

    def with_labels(self, labels) -> "PairConstraints":
        return PairConstraints(self.first, self.second, labels)

    @property
    def num_similar(self) -> int:
        return int((self.labels == SIMILAR).sum())

    @property
    def num_dissimilar(self) -> int:
        return len(self) - self.num_similar

    def check_bounds(self, batch_size: int):
        if len(self) and (self.first.min() < 0 or self.second.max() >= batch_size):
            raise IndexError(f"pair index outside batch of size {batch_size}")
        if np.any(self.first >= self.second):
            raise ValueError("pairs must satisfy i < j")


@dataclass(frozen=True)
class NoiseSpec:
    recall_similar: float = 1.0
    recall_dissimilar: float = 1.0
    seed: int = 0

    def __post_init__(self):
        for r in (self.recall_similar, self.recall_dissimilar):
            if not 0.0 <= r <= 1.0:
                raise ValueError(f"recall {r} outside [0, 1]")


def round_half_away(x: float) -> int:
    return int(math.floor(abs(x) + 0.5)) * (1 if x >= 0 else -1)


@lru_cache(maxsize=16)
def _triu(batch_size: int):
    first, second = np.triu_indices(batch_size, k=1)
    first.setflags(write=False)
    second.setflags(write=False)
    return first, second


def enumerate_pairs(batch_size: int, density: float = 1.0, seed=0):
    """All unordered pairs ``i < j`` of a batch, or a seeded uniform fraction of them.

    Returns ``(first, second)`` index arrays in lexicographic order.
    """
    if batch_size < 2:
        raise ValueError("need at least two samples to form a pair")
    if not 0.0 < density <= 1.0:
        raise ValueError("density must be in (0, 1]")
    first, second = _triu(batch_size)
    if density == 1.0:
        return first, second
    total = len(first)
    keep = max(1, round_half_away(density * total))
    pick = np.sort(np.random.default_rng(seed).choice(total, size=keep, replace=False))
    return first[pick], second[pick]


def ground_truth_labels(batch_labels, first, second) -> PairConstraints:
    """Label a pair similar iff both samples carry the same class."""
    if batch_labels is None:
        raise ValueError("ground-truth pair labels need class labels")
    y = np.asarray(batch_labels)
    return PairConstraints(first, second, (y[first] == y[second]).astype(np.int8))


def flip_for_recall(constraints: PairConstraints, noise: NoiseSpec, seed=None) -> PairConstraints:
    """Flip exactly round((1-r)·n) labels of each kind, chosen uniformly.

    ``seed`` overrides ``noise.seed`` (used for per-batch seeding).
    """
    rng = np.random.default_rng(noise.seed if seed is None else seed)
    labels = constraints.labels.copy()
    sim = np.flatnonzero(constraints.labels == SIMILAR)
    dis = np.flatnonzero(constraints.labels == DISSIMILAR)
    n_flip_s = round_half_away((1.0 - noise.recall_similar) * len(sim))
    n_flip_d = round_half_away((1.0 - noise.recall_dissimilar) * len(dis))
    if n_flip_s:
        labels[rng.choice(sim, size=n_flip_s, replace=False)] = DISSIMILAR
    if n_flip_d:
        labels[rng.choice(dis, size=n_flip_d, replace=False)] = SIMILAR
    return constraints.with_labels(labels)


def measure_recall(predicted: PairConstraints, truth: PairConstraints) -> tuple[float, float]:
    """Fraction of truly similar (dissimilar) pairs that ``predicted`` labels correctly.

    A class with no true pairs yields ``nan``.
    """
    if not (np.array_equal(predicted.first, truth.first)
            and np.array_equal(predicted.second, truth.second)):
        raise ValueError("predicted and true constraints cover different pairs")
    return recall_counts(predicted.labels, truth.labels).recalls()


@dataclass
class RecallCounts:
    true_similar: int = 0
    hit_similar: int = 0
    true_dissimilar: int = 0
    hit_dissimilar: int = 0

    def __iadd__(self, other: "RecallCounts"):
        self.true_similar += other.true_similar
        self.hit_similar += other.hit_similar
        self.true_dissimilar += other.true_dissimilar
        self.hit_dissimilar += other.hit_dissimilar
        return self

    def recalls(self) -> tuple[float, float]:
        rs = self.hit_similar / self.true_similar if self.true_similar else float("nan")
        rd = self.hit_dissimilar / self.true_dissimilar if self.true_dissimilar else float("nan")
        return rs, rd


def recall_counts(predicted_labels, true_labels) -> RecallCounts:
    p = np.asarray(predicted_labels)
    t = np.asarray(true_labels)
    sim = t == SIMILAR
    return RecallCounts(int(sim.sum()), int((p[sim] == SIMILAR).sum()),
                        int((~sim).sum()), int((p[~sim] == DISSIMILAR).sum()))


# --------------------------------------------------------------------------
# oracles


class SimilarityOracle(Protocol):
    def label_pairs(self, batch, first, second) -> np.ndarray:
        """0/1 label per pair ``(first[t], second[t])`` of ``batch``."""


def batch_seed(seed: int, batch) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed), int(batch.seed), int(batch.epoch), int(batch.number)])


@dataclass(frozen=True)
class GroundTruthOracle:
    """Class-label oracle, optionally degraded to a target recall per batch."""

    noise: Optional[NoiseSpec] = None

    def label_pairs(self, batch, first, second):
        cons = ground_truth_labels(batch.labels, first, second)
        if self.noise is None or (self.noise.recall_similar == 1.0
                                  and self.noise.recall_dissimilar == 1.0):
            return cons.labels
        return flip_for_recall(cons, self.noise, seed=batch_seed(self.noise.seed, batch)).labels


@dataclass(frozen=True)
class ConstantOracle:
    label: int = SIMILAR

    def label_pairs(self, batch, first, second):
        return np.full(len(first), self.label, dtype=np.int8)


@dataclass(frozen=True)
class ScorerOracle:
    """Binarise a pairwise similarity scorer (e.g. a trained SPN) at ``threshold``.

    The scorer exposes ``pair_probabilities(images, first, second)``.
    """

    scorer: object
    threshold: float = 0.5

    def label_pairs(self, batch, first, second):
        probs = self.scorer.pair_probabilities(batch.images, first, second)
        return (probs > self.threshold).astype(np.int8)


def oracle_labels(oracle: SimilarityOracle, batch, first, second) -> PairConstraints:
    labels = np.asarray(oracle.label_pairs(batch, first, second), dtype=np.int8)
    if labels.shape != (len(first),):
        raise ValueError("oracle returned the wrong number of labels")
    return PairConstraints(first, second, labels)

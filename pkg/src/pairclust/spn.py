"""Similarity prediction network (SPN).

A weight-shared Siamese feature network feeds the concatenated pair features
``[f_a ; f_b]`` to a two-layer head that outputs P(similar). Training uses every
unordered pair of each mini-batch with two-class cross-entropy.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import kernels
from .checkpoint import load_checkpoint, save_checkpoint
from .data import Batch, Dataset, batch_iter
from .network import (Dense, NetworkConfig, NetworkParameters, ReLU, backward, forward,
                      init_params, predict, sgd_step)
from .pairs import (RecallCounts, enumerate_pairs, ground_truth_labels, recall_counts)

log = logging.getLogger(__name__)

SIMILAR_CLASS = 1


@dataclass(frozen=True)
class SpnConfig:
    base: NetworkConfig
    hidden: int = 256
    batch_size: int = 64
    epochs: int = 5
    lr: float = 0.1
    momentum: float = 0.9
    seed: int = 0

    @property
    def feature_dim(self) -> int:
        return self.base.output_dim

    def head_config(self) -> NetworkConfig:
        f = self.feature_dim
        return NetworkConfig((2 * f,), (Dense(2 * f, self.hidden), ReLU(), Dense(self.hidden, 2)),
                             self.seed + 1)


def _log_softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


@dataclass
class SpnModel:
    base_cfg: NetworkConfig
    base: NetworkParameters
    head_cfg: NetworkConfig
    head: NetworkParameters
    meta: dict = field(default_factory=dict)

    @property
    def feature_dim(self) -> int:
        return self.base_cfg.output_dim

    def features(self, images) -> np.ndarray:
        return predict(self.base, self.base_cfg, images)

    # The first head layer acts on [f_a ; f_b], which equals
    # W[:, :F] f_a + W[:, F:] f_b. Both products are computed once per image
    # and combined per pair.
    def _pair_logits(self, feats, first, second):
        f = self.feature_dim
        w1, b1 = self.head.weights[0]["W"], self.head.weights[0]["b"]
        left = feats @ w1[:, :f].T
        right = feats @ w1[:, f:].T
        pre = left[first] + right[second] + b1
        hidden = np.maximum(pre, 0.0)
        w2, b2 = self.head.weights[2]["W"], self.head.weights[2]["b"]
        return hidden @ w2.T + b2, (feats, left, right, pre, hidden)

    def _pair_backward(self, cache, first, second, dlogits):
        feats, left, right, pre, hidden = cache
        f = self.feature_dim
        g1, g2 = self.head.grads[0], self.head.grads[2]
        w1, w2 = self.head.weights[0]["W"], self.head.weights[2]["W"]
        g2["W"] += dlogits.T @ hidden
        g2["b"] += dlogits.sum(axis=0)
        dpre = (dlogits @ w2) * (pre > 0)
        g1["b"] += dpre.sum(axis=0)
        d_left = kernels.scatter_add_rows(np.zeros_like(left), first, dpre)
        d_right = kernels.scatter_add_rows(np.zeros_like(right), second, dpre)
        g1["W"][:, :f] += d_left.T @ feats
        g1["W"][:, f:] += d_right.T @ feats
        return d_left @ w1[:, :f] + d_right @ w1[:, f:]

    def pair_probabilities(self, images, first, second, symmetric: bool = True,
                           chunk: int = 65536) -> np.ndarray:
        """P(similar) for each pair ``(images[first[t]], images[second[t]])``.

        The head is not symmetric in its two inputs; ``symmetric=True``
        averages both concatenation orders.
        """
        feats = self.features(images)
        first = np.asarray(first, dtype=np.int64)
        second = np.asarray(second, dtype=np.int64)
        out = np.empty(len(first))
        for s in range(0, len(first), chunk):
            a, b = first[s:s + chunk], second[s:s + chunk]
            p = np.exp(_log_softmax(self._pair_logits(feats, a, b)[0]))[:, SIMILAR_CLASS]
            if symmetric:
                q = np.exp(_log_softmax(self._pair_logits(feats, b, a)[0]))[:, SIMILAR_CLASS]
                p = 0.5 * (p + q)
            out[s:s + chunk] = p
        return out

    def copy(self) -> "SpnModel":
        return SpnModel(self.base_cfg, self.base.copy(), self.head_cfg, self.head.copy(), dict(self.meta))

    def equals(self, other: "SpnModel") -> bool:
        return self.base.equals(other.base) and self.head.equals(other.head)

    def save(self, path, extra_meta: Optional[dict] = None) -> None:
        meta = dict(self.meta, kind="spn", **(extra_meta or {}))
        save_checkpoint(path, {"base": (self.base_cfg, self.base),
                               "head": (self.head_cfg, self.head)}, meta)

    @classmethod
    def load(cls, path) -> "SpnModel":
        sections, meta = load_checkpoint(path)
        if meta.get("kind") != "spn" or set(sections) != {"base", "head"}:
            raise ValueError(f"{path} is not an SPN checkpoint")
        (bc, bp), (hc, hp) = sections["base"], sections["head"]
        return cls(bc, bp, hc, hp, meta)


def init_spn(cfg: SpnConfig) -> SpnModel:
    head_cfg = cfg.head_config()
    return SpnModel(cfg.base.with_seed(cfg.seed), init_params(cfg.base.with_seed(cfg.seed)),
                    head_cfg, init_params(head_cfg))


def predict_similarity(model, image_a, image_b, symmetric: bool = True) -> float:
    images = np.stack([np.asarray(image_a), np.asarray(image_b)])
    return float(model.pair_probabilities(images, [0], [1], symmetric=symmetric)[0])


def spn_batch_step(model: SpnModel, batch: Batch):
    """Cross-entropy over every pair of one batch; fills gradients, returns the mean loss."""
    first, second = enumerate_pairs(len(batch))
    target = ground_truth_labels(batch.labels, first, second).labels.astype(np.int64)
    feats, base_cache = forward(model.base, model.base_cfg, batch.images)
    logits, cache = model._pair_logits(feats, first, second)
    logp = _log_softmax(logits)
    rows = np.arange(len(target))
    loss = -float(logp[rows, target].mean())
    dlogits = np.exp(logp)
    dlogits[rows, target] -= 1.0
    dlogits /= len(target)
    dfeats = model._pair_backward(cache, first, second, dlogits)
    backward(model.base, model.base_cfg, base_cache, dfeats)
    return loss


def train_spn(source: Dataset, cfg: SpnConfig) -> SpnModel:
    """Train base and head jointly by SGD with momentum on dense in-batch pairs."""
    if source.labels is None:
        raise ValueError("SPN training needs a labelled source dataset")
    if source.num_classes < 2:
        raise ValueError("SPN training needs at least two source classes")
    model = init_spn(cfg)
    losses = []
    for epoch in range(cfg.epochs):
        epoch_losses = []
        for batch in batch_iter(source, cfg.batch_size, cfg.seed, epoch):
            if len(batch) < 2:
                continue
            loss = spn_batch_step(model, batch)
            if not np.isfinite(loss):
                raise FloatingPointError(f"non-finite SPN loss at epoch {epoch} batch {batch.number}")
            sgd_step(model.base, cfg.lr, cfg.momentum)
            sgd_step(model.head, cfg.lr, cfg.momentum)
            epoch_losses.append(loss)
        losses.append(float(np.mean(epoch_losses)))
        log.info("spn epoch %d loss %.5f", epoch, losses[-1])
    model.meta = {"source": source.name, "epochs": cfg.epochs, "epoch_losses": losses}
    return model


def eval_pair_recall(scorer, target: Dataset, num_batches: int, batch_size: int,
                     seed: int = 0, threshold: float = 0.5) -> tuple[float, float]:
    """Recall of binarised scorer predictions over dense pairs of seeded batches."""
    if target.labels is None:
        raise ValueError("recall evaluation needs labels")
    counts = RecallCounts()
    done = 0
    epoch = 0
    while done < num_batches:
        for batch in batch_iter(target, batch_size, seed, epoch):
            if done >= num_batches:
                break
            if len(batch) < 2:
                continue
            first, second = enumerate_pairs(len(batch))
            truth = ground_truth_labels(batch.labels, first, second).labels
            pred = (scorer.pair_probabilities(batch.images, first, second) > threshold)
            counts += recall_counts(pred.astype(np.int8), truth)
            done += 1
        epoch += 1
    return counts.recalls()


def nway_test(scorer, dataset: Dataset, n: int, trials: int, seed: int = 0) -> float:
    """Fraction of trials where the query is most similar to its own class's reference.

    Each trial draws ``n`` distinct classes, one reference image per class and
    one query from one of them (a different image than its reference when the
    class has more than one). Ties go to the lowest class id.
    """
    if dataset.labels is None:
        raise ValueError("the N-way test needs labels")
    if n > dataset.num_classes:
        raise ValueError(f"N={n} exceeds the {dataset.num_classes} available classes")
    if n < 1 or trials < 1:
        raise ValueError("n and trials must be positive")
    rng = np.random.default_rng(seed)
    members = [np.flatnonzero(dataset.labels == c) for c in range(dataset.num_classes)]
    correct = 0
    for _ in range(trials):
        classes = np.sort(rng.choice(dataset.num_classes, size=n, replace=False))
        refs = [int(rng.choice(members[c])) for c in classes]
        answer = int(rng.integers(n))
        pool = members[classes[answer]]
        if len(pool) > 1:
            pool = pool[pool != refs[answer]]
        query = int(rng.choice(pool))
        images = dataset.images[refs + [query]]
        sims = scorer.pair_probabilities(images, np.full(n, n), np.arange(n))
        correct += int(np.argmax(sims) == answer)
    return correct / trials

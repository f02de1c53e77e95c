"""Clustering-network training loop driven by pairwise oracle labels."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .data import Dataset, batch_iter
from .loss import LossConfig, contrastive_batch_loss
from .metrics import acc, nmi
from .network import (NetworkConfig, NetworkParameters, backward, forward, init_params,
                      predict, sgd_step, softmax, softmax_forward)
from .pairs import GroundTruthOracle, enumerate_pairs, oracle_labels

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ClusterRunConfig:
    network: NetworkConfig
    loss: LossConfig = LossConfig()
    oracle: object = GroundTruthOracle()
    density: float = 1.0
    batch_size: int = 256
    epochs: int = 15
    lr: float = 0.1
    momentum: float = 0.9
    restarts: int = 5
    base_seed: int = 0
    select_by: str = "nmi"

    def __post_init__(self):
        if self.network.output_dim < 2:
            raise ValueError("need at least two output clusters")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        if not 0.0 < self.density <= 1.0:
            raise ValueError("density must be in (0, 1]")
        if self.select_by not in ("nmi", "loss"):
            raise ValueError("select_by must be 'nmi' or 'loss'")

    @property
    def num_clusters(self) -> int:
        return self.network.output_dim


@dataclass
class RestartResult:
    restart: int
    seed: int
    final_loss: float
    loss_curve: list
    epoch_losses: list
    nmi: Optional[float] = None
    acc: Optional[float] = None
    nmi_test: Optional[float] = None
    acc_test: Optional[float] = None
    params: Optional[NetworkParameters] = field(default=None, repr=False)
    assignments: Optional[np.ndarray] = field(default=None, repr=False)
    test_assignments: Optional[np.ndarray] = field(default=None, repr=False)

    def summary(self, curves: bool = False) -> dict:
        out = {"restart": self.restart, "seed": self.seed, "final_loss": self.final_loss,
               "epoch_losses": self.epoch_losses, "nmi": self.nmi, "acc": self.acc,
               "nmi_test": self.nmi_test, "acc_test": self.acc_test}
        if curves:
            out["loss_curve"] = self.loss_curve
        return out


@dataclass
class ClusterRunResult:
    restarts: list
    best_index: int
    best_by_loss_index: int
    wall_seconds: float = 0.0

    @property
    def best(self) -> RestartResult:
        return self.restarts[self.best_index]

    @property
    def assignments(self) -> np.ndarray:
        return self.best.assignments

    def to_dict(self, include_assignments: bool = False, curves: bool = False) -> dict:
        out = {"best_index": self.best_index, "best_by_loss_index": self.best_by_loss_index,
               "restarts": [r.summary(curves) for r in self.restarts],
               "wall_seconds": self.wall_seconds}
        if include_assignments:
            out["assignments"] = self.best.assignments.tolist()
            if self.best.test_assignments is not None:
                out["test_assignments"] = self.best.test_assignments.tolist()
        return out


def assign_clusters(params: NetworkParameters, cfg: NetworkConfig, dataset) -> np.ndarray:
    """Hard assignment by argmax of the softmax output; ties go to the lowest index."""
    images = dataset.images if isinstance(dataset, Dataset) else np.asarray(dataset)
    return np.argmax(softmax(predict(params, cfg, images)), axis=1)


def pair_seed(seed: int, epoch: int, number: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed), int(epoch), int(number), 0x9A125])


def train_restart(cfg: ClusterRunConfig, dataset: Dataset, restart: int,
                  test_set: Optional[Dataset] = None) -> RestartResult:
    seed = cfg.base_seed + restart
    net = cfg.network.with_seed(seed)
    params = init_params(net)
    curve: list[float] = []
    epoch_losses: list[float] = []
    for epoch in range(cfg.epochs):
        start = len(curve)
        for batch in batch_iter(dataset, cfg.batch_size, seed, epoch):
            if len(batch) < 2:
                continue
            logits, cache = forward(params, net, batch.images)
            sm = softmax_forward(logits)
            first, second = enumerate_pairs(len(batch), cfg.density,
                                            pair_seed(seed, epoch, batch.number))
            cons = oracle_labels(cfg.oracle, batch, first, second)
            res = contrastive_batch_loss(sm, cons, cfg.loss)
            # the hinge clips NaN to zero, so check the logits as well
            if not (np.isfinite(res.total_loss) and np.isfinite(logits).all()):
                raise FloatingPointError(
                    f"non-finite loss at restart {restart} epoch {epoch} batch {batch.number}")
            backward(params, net, cache, res.grad_wrt_logits)
            sgd_step(params, cfg.lr, cfg.momentum)
            curve.append(res.total_loss)
        epoch_losses.append(float(np.mean(curve[start:])) if len(curve) > start else float("nan"))
        log.debug("restart %d epoch %d loss %.5f", restart, epoch, epoch_losses[-1])
    final = epoch_losses[-1] if epoch_losses else float("nan")
    result = RestartResult(restart, seed, final, curve, epoch_losses, params=params)
    result.assignments = assign_clusters(params, net, dataset)
    if dataset.labels is not None:
        result.nmi = nmi(result.assignments, dataset.labels)
        result.acc = acc(result.assignments, dataset.labels)
    if test_set is not None:
        result.test_assignments = assign_clusters(params, net, test_set)
        if test_set.labels is not None:
            result.nmi_test = nmi(result.test_assignments, test_set.labels)
            result.acc_test = acc(result.test_assignments, test_set.labels)
    return result


def _argbest(values, maximize):
    values = np.asarray([np.nan if v is None else v for v in values], dtype=float)
    values = np.where(np.isnan(values), -np.inf if maximize else np.inf, values)
    return int(np.argmax(values) if maximize else np.argmin(values))


def train_clusternet(cfg: ClusterRunConfig, dataset: Dataset,
                     test_set: Optional[Dataset] = None) -> ClusterRunResult:
    """Train ``cfg.restarts`` independently seeded networks and pick the best.

    The best restart maximises training NMI when labels exist and
    ``select_by == "nmi"``; otherwise it minimises the final epoch loss.
    """
    t0 = time.perf_counter()
    runs = [train_restart(cfg, dataset, r, test_set) for r in range(cfg.restarts)]
    by_loss = _argbest([r.final_loss for r in runs], maximize=False)
    if cfg.select_by == "nmi" and dataset.labels is not None:
        best = _argbest([r.nmi for r in runs], maximize=True)
    else:
        best = by_loss
    return ClusterRunResult(runs, best, by_loss, time.perf_counter() - t0)

"""Hinged KL-divergence contrastive loss over pairs of cluster distributions.

For a similar pair the cost is ``KL(P*||Q) + KL(Q*||P)``; for a dissimilar pair
each direction becomes ``max(0, margin - KL)``. The starred argument is held
constant, so every KL term only pushes on its second argument.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from . import kernels
from .network import Softmax, softmax, softmax_forward
from .pairs import DISSIMILAR, SIMILAR, PairConstraints


class EmptyConstraintsError(ValueError):
    pass


@dataclass(frozen=True)
class LossConfig:
    margin: float = 2.0
    reduction: str = "mean"

    def __post_init__(self):
        if not self.margin > 0:
            raise ValueError("margin must be positive")
        if self.reduction not in ("mean", "sum"):
            raise ValueError("reduction must be 'mean' or 'sum'")


@dataclass
class PairLossResult:
    total_loss: float
    grad_wrt_logits: np.ndarray
    pair_count_similar: int
    pair_count_dissimilar: int
    active_hinges: int = 0


def kl(p, q) -> float:
    """KL(p || q) in nats."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    return float(np.sum(p * (np.log(p) - np.log(q))))


def contrastive_batch_loss(outputs: Union[np.ndarray, Softmax], constraints: PairConstraints,
                           cfg: LossConfig = LossConfig()) -> PairLossResult:
    """Loss over the listed pairs and its gradient w.r.t. the logits.

    ``outputs`` is either a B x M logit array or the :class:`Softmax` built
    from it.
    """
    sm = outputs if isinstance(outputs, Softmax) else softmax_forward(outputs)
    if len(constraints) == 0:
        raise EmptyConstraintsError("no pair constraints in batch")
    constraints.check_bounds(len(sm.probs))
    probs = sm.probs
    total, grad_probs, active = kernels.pair_kl_terms(
        probs, np.log(probs), constraints.first, constraints.second,
        constraints.labels, float(cfg.margin))
    if cfg.reduction == "mean":
        total /= len(constraints)
        grad_probs /= len(constraints)
    return PairLossResult(float(total), sm.backprop(grad_probs),
                          constraints.num_similar, constraints.num_dissimilar, int(active))


def _pair(logits_p, logits_q, label, margin):
    z = np.stack([np.asarray(logits_p, float), np.asarray(logits_q, float)])
    res = contrastive_batch_loss(z, PairConstraints([0], [1], [label]),
                                 LossConfig(margin=margin, reduction="sum"))
    return res.total_loss, res.grad_wrt_logits[0], res.grad_wrt_logits[1]


def similar_pair_loss(logits_p, logits_q):
    """``(loss, grad_p_logits, grad_q_logits)`` for one similar pair."""
    return _pair(logits_p, logits_q, SIMILAR, 1.0)


def dissimilar_pair_loss(logits_p, logits_q, margin: float = 2.0):
    """``(loss, grad_p_logits, grad_q_logits)`` for one dissimilar pair."""
    return _pair(logits_p, logits_q, DISSIMILAR, margin)


def frozen_target_loss(logits, constraints: PairConstraints, targets: np.ndarray,
                       cfg: LossConfig = LossConfig()) -> float:
    """Loss value with every starred distribution replaced by a row of ``targets``.

    Evaluated pair by pair without the batched kernel. Its derivative at the
    point where ``targets == softmax(logits)`` is the stop-gradient gradient
    returned by :func:`contrastive_batch_loss`, which makes it the function to
    difference numerically.
    """
    probs = softmax(logits)
    targets = np.asarray(targets, dtype=np.float64)
    total = 0.0
    for a, b, label in constraints:
        ab = float(np.sum(targets[a] * np.log(targets[a] / probs[b])))
        ba = float(np.sum(targets[b] * np.log(targets[b] / probs[a])))
        if label == SIMILAR:
            total += ab + ba
        else:
            total += max(0.0, cfg.margin - ab) + max(0.0, cfg.margin - ba)
    if cfg.reduction == "mean":
        total /= len(constraints)
    return total

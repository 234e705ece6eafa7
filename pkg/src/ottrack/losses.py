"""Scalar loss functions over boxes, class logits and embeddings.

The contrastive losses use ``log(1 + sum exp(s_n - s_p))`` where ``s`` is the
raw dot product between the anchor and a positive/negative embedding. All
exponentials go through log-sum-exp.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from scipy.special import log_softmax, logsumexp

from .geometry import BoundingBox

DEFAULT_EMBED_DIM = 512


def smooth_l1(diff, beta: float = 1.0) -> np.ndarray:
    d = np.abs(np.asarray(diff, dtype=float))
    return np.where(d < beta, 0.5 * d**2 / beta, d - 0.5 * beta)


def cross_entropy(logits, target: int) -> float:
    logits = np.asarray(logits, dtype=float)
    if not 0 <= target < logits.size:
        raise ValueError(f"target class {target} outside logits of size {logits.size}")
    return float(-log_softmax(logits)[target])


@dataclass
class DetectionLossInput:
    proposal_box: BoundingBox
    target_box: BoundingBox
    class_logits: np.ndarray
    target_class: int
    lambda_reg: float = 1.0
    lambda_cls: float = 1.0

    def __post_init__(self):
        self.class_logits = np.asarray(self.class_logits, dtype=float).ravel()
        if not 0 <= self.target_class < self.class_logits.size:
            raise ValueError(f"target_class {self.target_class} outside {self.class_logits.size} logits")
        if self.lambda_reg < 0 or self.lambda_cls < 0:
            raise ValueError("loss weights must be non-negative")


def detection_loss(inputs: Sequence[DetectionLossInput], beta: float = 1.0) -> float:
    """Mean over proposals of weighted smooth-L1 box regression plus class cross-entropy.

    Regression is on raw (x, y, w, h) differences; there are no anchors.
    """
    if len(inputs) == 0:
        raise ValueError("detection loss needs at least one proposal")
    total = 0.0
    for inp in inputs:
        reg = smooth_l1(inp.proposal_box.as_array() - inp.target_box.as_array(), beta).sum()
        total += inp.lambda_reg * reg + inp.lambda_cls * cross_entropy(inp.class_logits, inp.target_class)
    return total / len(inputs)


def _stack(vectors, dim: int, what: str) -> np.ndarray:
    if len(vectors) == 0:
        return np.zeros((0, dim))
    arr = np.atleast_2d(np.asarray(vectors, dtype=float))
    if arr.shape[1] != dim:
        raise ValueError(f"{what} have dimension {arr.shape[1]}, anchor has {dim}")
    return arr


def _pair_logits(anchor, positives, negatives):
    a = np.asarray(anchor, dtype=float).ravel()
    pos = _stack(positives, a.size, "positives")
    neg = _stack(negatives, a.size, "negatives")
    # z[p, n] = s_n - s_p
    z = (neg @ a)[None, :] - (pos @ a)[:, None]
    return a, pos, neg, z


def multiple_positive_loss(anchor, positives, negatives) -> float:
    """``log(1 + sum_p sum_n exp(s_n - s_p))``; zero when either set is empty."""
    _, _, _, z = _pair_logits(anchor, positives, negatives)
    if z.size == 0:
        return 0.0
    return float(np.logaddexp(0.0, logsumexp(z)))


def similarity_loss(anchor, positive, negatives) -> float:
    """Single-positive contrastive loss ``log(1 + sum_n exp(s_n - s_p))``."""
    return multiple_positive_loss(anchor, [positive], negatives)


class LossGradient(NamedTuple):
    anchor: np.ndarray
    positives: np.ndarray
    negatives: np.ndarray


def loss_gradient(loss_id: str, anchor, positives, negatives) -> LossGradient:
    """Analytic gradient of a contrastive loss w.r.t. every embedding entry.

    ``loss_id`` is ``"similarity"`` (``positives`` is then a single vector) or
    ``"multiple_positive"``. With ``w[p, n] = exp(s_n - s_p) / (1 + S)``:
    dL/da = sum w (neg_n - pos_p), dL/dpos_p = -sum_n w a, dL/dneg_n = sum_p w a.
    """
    if loss_id == "similarity":
        positives = [positives]
    elif loss_id != "multiple_positive":
        raise ValueError(f"no analytic gradient for loss {loss_id!r}")
    a, pos, neg, z = _pair_logits(anchor, positives, negatives)
    if z.size == 0:
        return LossGradient(np.zeros_like(a), np.zeros_like(pos), np.zeros_like(neg))
    w = np.exp(z - np.logaddexp(0.0, logsumexp(z)))
    grad_a = w.sum(axis=0) @ neg - w.sum(axis=1) @ pos
    grad_pos = -w.sum(axis=1)[:, None] * a[None, :]
    grad_neg = w.sum(axis=0)[:, None] * a[None, :]
    if loss_id == "similarity":
        grad_pos = grad_pos[0]
    return LossGradient(grad_a, grad_pos, grad_neg)

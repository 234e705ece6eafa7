"""Per-frame loss evaluation for the source (labelled) and target (unlabelled) branches.

Nothing here trains anything: given detections from two augmented views and
an embedding provider, the functions evaluate every loss term a training step
would optimise.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .agreement import View, agreement_loss, agreement_matrix, recover_proposals
from .geometry import BoundingBox, Detection, iou_matrix
from .losses import DetectionLossInput, detection_loss, multiple_positive_loss, similarity_loss
from .opa import SampledProposals, auxiliary_loss, marginals_one_to_many, marginals_one_to_one, select_soft_labels
from .transport import SinkhornConfig, TransportPlan, cosine_cost, sinkhorn_solve

# maps boxes to one embedding row each
EmbeddingProvider = Callable[[Sequence[BoundingBox]], np.ndarray]

FOREGROUND, BACKGROUND = 1, 0


@dataclass
class LossWeights:
    det: float = 1.0
    agr: float = 1.0
    mp: float = 1.0
    aux: float = 1.0
    sim: float = 1.0


def score_logits(score: float, eps: float = 1e-6) -> np.ndarray:
    """Two-class (background, foreground) logits reproducing a detector score."""
    s = float(np.clip(score, eps, 1.0 - eps))
    return np.array([np.log1p(-s), np.log(s)])


def supervised_detection_inputs(dets: Sequence[Detection], gt_boxes: Sequence[BoundingBox], fg_iou: float = 0.5):
    """Targets follow the max-IoU ground-truth box; background proposals get no box regression."""
    if not dets:
        return []
    if not gt_boxes:
        return [DetectionLossInput(d.box, d.box, score_logits(d.score), BACKGROUND, lambda_reg=0.0) for d in dets]
    ious = iou_matrix([d.box for d in dets], gt_boxes)
    out = []
    for k, det in enumerate(dets):
        g = int(np.argmax(ious[k]))
        fg = ious[k, g] >= fg_iou
        out.append(
            DetectionLossInput(
                det.box,
                gt_boxes[g],
                score_logits(det.score),
                FOREGROUND if fg else BACKGROUND,
                lambda_reg=1.0 if fg else 0.0,
            )
        )
    return out


@dataclass
class SourceLosses:
    det: float
    agr: float
    mp: float
    aux: float
    total: float
    plan: Optional[TransportPlan] = None
    sampled: Optional[SampledProposals] = None


def source_losses(
    gt_boxes: Sequence[BoundingBox],
    view_a: View,
    view_b: View,
    track_embeddings: np.ndarray,
    sampled: SampledProposals,
    embed: EmbeddingProvider,
    sinkhorn: Optional[SinkhornConfig] = None,
    weights: Optional[LossWeights] = None,
) -> SourceLosses:
    """Loss terms of one labelled frame.

    Rows of ``track_embeddings`` follow ``gt_boxes``; ``sampled`` positives
    are owned by those rows. The transport problem is one-to-many: each track
    ships one unit per positive it owns, negatives receive nothing.
    """
    weights = weights or LossWeights()
    det_terms = []
    for view in (view_a, view_b):
        inputs = supervised_detection_inputs(view.original_detections(), gt_boxes)
        det_terms.append(detection_loss(inputs) if inputs else 0.0)
    l_det = float(sum(det_terms))

    mat = agreement_matrix(view_a, view_b)
    l_agr = agreement_loss(mat) if mat.size else 0.0

    tracks = np.atleast_2d(np.asarray(track_embeddings, dtype=float))
    plan = None
    l_mp = l_aux = 0.0
    if len(sampled):
        prop = np.atleast_2d(embed(sampled.boxes))
        cost = cosine_cost(tracks, prop)
        plan = sinkhorn_solve(cost, marginals_one_to_many(len(tracks), sampled), sinkhorn)
        l_aux = auxiliary_loss(plan, sampled)
        n_pos = len(sampled.positives)
        negs = prop[n_pos:]
        mp_terms = []
        for i, anchor in enumerate(tracks):
            own = [prop[j] for j, (_, owner) in enumerate(sampled.positives) if owner == i]
            mp_terms.append(multiple_positive_loss(anchor, own, negs))
        l_mp = float(np.mean(mp_terms))

    total = weights.det * l_det + weights.agr * l_agr + weights.mp * l_mp + weights.aux * l_aux
    return SourceLosses(l_det, l_agr, l_mp, l_aux, total, plan, sampled)


@dataclass
class TargetLosses:
    det: float
    sim: float
    total: float
    recovered: list[Detection] = field(default_factory=list)
    plan: Optional[TransportPlan] = None


def target_losses(
    track_embeddings: np.ndarray,
    view_a: View,
    view_b: View,
    embed: EmbeddingProvider,
    low_threshold: float = 0.3,
    pair_threshold: float = 0.4,
    nms_threshold: float = 0.5,
    sinkhorn: Optional[SinkhornConfig] = None,
    weights: Optional[LossWeights] = None,
) -> TargetLosses:
    """Loss terms of one unlabelled frame, with labels taken from the one-to-one plan.

    For each previous track the plan's argmax detection is the positive and
    its argmin the negative. Without ground-truth boxes only the
    classification half of the detection loss is defined: the positive is
    pushed to foreground and the negative to background.
    """
    weights = weights or LossWeights()
    recovered = recover_proposals(view_a, view_b, low_threshold, pair_threshold, nms_threshold)
    tracks = np.atleast_2d(np.asarray(track_embeddings, dtype=float))
    if len(recovered) < 2 or tracks.size == 0:
        return TargetLosses(0.0, 0.0, 0.0, recovered)
    dets = np.atleast_2d(embed([d.box for d in recovered]))
    cost = cosine_cost(tracks, dets)
    plan = sinkhorn_solve(cost, marginals_one_to_one(len(tracks), len(recovered)), sinkhorn)
    labels = select_soft_labels(plan)
    sims, det_inputs = [], []
    for i, (p, n) in enumerate(zip(labels.positive_cols, labels.negative_cols)):
        sims.append(similarity_loss(tracks[i], dets[p], [dets[n]]))
        for k, cls in ((p, FOREGROUND), (n, BACKGROUND)):
            d = recovered[k]
            det_inputs.append(DetectionLossInput(d.box, d.box, score_logits(d.score), cls, lambda_reg=0.0))
    l_sim = float(np.mean(sims))
    l_det = detection_loss(det_inputs)
    return TargetLosses(l_det, l_sim, weights.det * l_det + weights.sim * l_sim, recovered, plan)

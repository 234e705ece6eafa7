"""Optimal-transport association, consistency agreement and evaluation for tracking-by-detection."""

__version__ = "0.1.0"

from .agreement import View, agree, agreement_loss, agreement_matrix, recover_proposals
from .geometry import AffineTransform, BoundingBox, Detection, apply_affine, giou, giou_matrix, invert, iou, nms
from .metrics import SequenceEvalResult, detection_ap, evaluate
from .opa import (
    SampledProposals,
    auxiliary_loss,
    marginals_one_to_many,
    marginals_one_to_one,
    select_soft_labels,
)
from .tracker import Association, TrackerConfig, bisoftmax_scores, initialize, step, track_sequence
from .transport import (
    Marginals,
    SinkhornConfig,
    TransportPlan,
    cosine_cost,
    exact_assignment_oracle,
    extract_hard_assignment,
    sinkhorn_solve,
)

"""Object consistency agreement between two augmented detection views.

Two detector runs over differently augmented copies of a frame should agree
on where objects are. The GIoU matrix between the views is both a loss
(average over view-A boxes of ``1 - best GIoU``) and a filter that lets
low-confidence detections through when both views see them.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .geometry import AffineTransform, BoundingBox, Detection, apply_affine, giou_matrix, nms

DEFAULT_LOW_THRESHOLD = 0.3
DEFAULT_PAIR_THRESHOLD = 0.4
DEFAULT_NMS_THRESHOLD = 0.5


class EmptyAgreementWarning(UserWarning):
    """An agreement loss was requested on a view with no detections."""


@dataclass
class View:
    """Detections from one augmented copy of a frame.

    ``transformed`` marks views whose boxes live in augmented coordinates;
    such views must carry ``inverse`` to be compared against other views.
    """

    detections: list[Detection]
    transformed: bool = False
    inverse: Optional[AffineTransform] = None

    def original_boxes(self) -> list[BoundingBox]:
        if not self.transformed:
            return [d.box for d in self.detections]
        if self.inverse is None:
            raise ValueError("view was produced under an affine augmentation but no inverse transform was supplied")
        return [apply_affine(self.inverse, d.box) for d in self.detections]

    def original_detections(self) -> list[Detection]:
        return [Detection(b, d.score) for b, d in zip(self.original_boxes(), self.detections)]


ViewLike = Union[View, Sequence[Detection]]


def _as_view(v: ViewLike) -> View:
    return v if isinstance(v, View) else View(list(v))


@dataclass
class AgreementResult:
    matrix: np.ndarray
    loss: float
    matched_pairs: list[tuple[int, int, float]] = field(default_factory=list)
    empty: bool = False


def agreement_matrix(view_a: ViewLike, view_b: ViewLike) -> np.ndarray:
    """GIoU between every view-A and view-B box, both mapped back to original coordinates."""
    return giou_matrix(_as_view(view_a).original_boxes(), _as_view(view_b).original_boxes())


def agreement_loss(matrix) -> float:
    matrix = np.asarray(matrix, dtype=float)
    if matrix.ndim != 2 or matrix.size == 0:
        warnings.warn("agreement loss on an empty view is defined as 0", EmptyAgreementWarning, stacklevel=2)
        return 0.0
    return float(np.mean(1.0 - matrix.max(axis=1)))


def agree(view_a: ViewLike, view_b: ViewLike, pair_threshold: float = DEFAULT_PAIR_THRESHOLD) -> AgreementResult:
    """Agreement matrix, loss and the per-row argmax pairs that clear ``pair_threshold``."""
    mat = agreement_matrix(view_a, view_b)
    if mat.size == 0:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", EmptyAgreementWarning)
            return AgreementResult(mat, agreement_loss(mat), [], empty=True)
    loss = agreement_loss(mat)
    pairs = []
    for i, j in enumerate(np.argmax(mat, axis=1)):
        g = float(mat[i, j])
        if g >= pair_threshold:
            pairs.append((i, int(j), g))
    return AgreementResult(mat, loss, pairs)


def _agreeing_pairs(view_a: View, view_b: View, low_threshold: float, pair_threshold: float):
    a_idx = [i for i, d in enumerate(view_a.detections) if d.score >= low_threshold]
    b_idx = [j for j, d in enumerate(view_b.detections) if d.score >= low_threshold]
    if not a_idx or not b_idx:
        return []
    boxes_a = view_a.original_boxes()
    boxes_b = view_b.original_boxes()
    mat = giou_matrix([boxes_a[i] for i in a_idx], [boxes_b[j] for j in b_idx])
    out = []
    for r, c in enumerate(np.argmax(mat, axis=1)):
        if mat[r, c] >= pair_threshold:
            out.append((a_idx[r], b_idx[int(c)]))
    return out


def recover_proposals(
    view_a: ViewLike,
    view_b: ViewLike,
    low_threshold: float = DEFAULT_LOW_THRESHOLD,
    pair_threshold: float = DEFAULT_PAIR_THRESHOLD,
    nms_threshold: float = DEFAULT_NMS_THRESHOLD,
) -> list[Detection]:
    """Keep low-confidence detections that both views agree on.

    Detections under ``low_threshold`` are discarded in each view, every
    remaining view-A box is paired with its best-GIoU view-B box, pairs below
    ``pair_threshold`` are rejected, and the surviving view-A boxes (scored
    with the mean of the two views' scores) go through NMS. Boxes are returned
    in original image coordinates.
    """
    if not 0.0 <= low_threshold <= 1.0:
        raise ValueError(f"low_threshold must lie in [0, 1], got {low_threshold}")
    va, vb = _as_view(view_a), _as_view(view_b)
    boxes_a = va.original_boxes()
    recovered = [
        Detection(boxes_a[i], 0.5 * (va.detections[i].score + vb.detections[j].score))
        for i, j in _agreeing_pairs(va, vb, low_threshold, pair_threshold)
    ]
    return nms(recovered, nms_threshold)

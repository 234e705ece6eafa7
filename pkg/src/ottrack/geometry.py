"""Axis-aligned box arithmetic.

Boxes are stored as (x, y, w, h) with (x, y) the top-left corner, matching the
MOT Challenge text format. Corner form (x1, y1, x2, y2) is only used internally.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np


class DegenerateTransformError(ValueError):
    """Raised when an affine augmentation cannot be inverted."""


@dataclass(frozen=True)
class BoundingBox:
    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        vals = (self.x, self.y, self.w, self.h)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"box fields must be finite, got {vals}")
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"box width/height must be positive, got w={self.w}, h={self.h}")

    @classmethod
    def from_corners(cls, x1: float, y1: float, x2: float, y2: float) -> "BoundingBox":
        return cls(float(x1), float(y1), float(x2 - x1), float(y2 - y1))

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h

    @property
    def area(self) -> float:
        return self.w * self.h

    def corners(self) -> tuple[float, float, float, float]:
        return self.x, self.y, self.x2, self.y2

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.w, self.h], dtype=float)


@dataclass(frozen=True)
class Detection:
    """A detector output: a box plus a foreground confidence in [0, 1]."""

    box: BoundingBox
    score: float

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"detection score must lie in [0, 1], got {self.score}")


def _intersection(a: BoundingBox, b: BoundingBox) -> float:
    iw = min(a.x2, b.x2) - max(a.x, b.x)
    ih = min(a.y2, b.y2) - max(a.y, b.y)
    if iw <= 0 or ih <= 0:
        return 0.0
    return iw * ih


def _corner_area(b: BoundingBox) -> float:
    # same arithmetic as the intersection, so iou(a, a) is exactly 1
    return (b.x2 - b.x) * (b.y2 - b.y)


def iou(a: BoundingBox, b: BoundingBox) -> float:
    inter = _intersection(a, b)
    return min(inter / (_corner_area(a) + _corner_area(b) - inter), 1.0)


def giou(a: BoundingBox, b: BoundingBox) -> float:
    """Generalized IoU: IoU minus the fraction of the enclosing box not covered by the union."""
    inter = _intersection(a, b)
    union = _corner_area(a) + _corner_area(b) - inter
    cw = max(a.x2, b.x2) - min(a.x, b.x)
    ch = max(a.y2, b.y2) - min(a.y, b.y)
    enclose = cw * ch
    return min(inter / union, 1.0) - max(enclose - union, 0.0) / enclose


def _corner_array(boxes: Sequence[BoundingBox]) -> np.ndarray:
    if len(boxes) == 0:
        return np.zeros((0, 4))
    return np.array([b.corners() for b in boxes], dtype=float)


def iou_matrix(set_a: Sequence[BoundingBox], set_b: Sequence[BoundingBox]) -> np.ndarray:
    a = _corner_array(set_a)[:, None, :]
    b = _corner_array(set_b)[None, :, :]
    iw = np.clip(np.minimum(a[..., 2], b[..., 2]) - np.maximum(a[..., 0], b[..., 0]), 0, None)
    ih = np.clip(np.minimum(a[..., 3], b[..., 3]) - np.maximum(a[..., 1], b[..., 1]), 0, None)
    inter = iw * ih
    area_a = (a[..., 2] - a[..., 0]) * (a[..., 3] - a[..., 1])
    area_b = (b[..., 2] - b[..., 0]) * (b[..., 3] - b[..., 1])
    return np.minimum(inter / (area_a + area_b - inter), 1.0)


def giou_matrix(set_a: Sequence[BoundingBox], set_b: Sequence[BoundingBox]) -> np.ndarray:
    """Pairwise GIoU, shape (len(set_a), len(set_b)). Either set may be empty."""
    a = _corner_array(set_a)[:, None, :]
    b = _corner_array(set_b)[None, :, :]
    iw = np.clip(np.minimum(a[..., 2], b[..., 2]) - np.maximum(a[..., 0], b[..., 0]), 0, None)
    ih = np.clip(np.minimum(a[..., 3], b[..., 3]) - np.maximum(a[..., 1], b[..., 1]), 0, None)
    inter = iw * ih
    area_a = (a[..., 2] - a[..., 0]) * (a[..., 3] - a[..., 1])
    area_b = (b[..., 2] - b[..., 0]) * (b[..., 3] - b[..., 1])
    union = area_a + area_b - inter
    cw = np.maximum(a[..., 2], b[..., 2]) - np.minimum(a[..., 0], b[..., 0])
    ch = np.maximum(a[..., 3], b[..., 3]) - np.minimum(a[..., 1], b[..., 1])
    enclose = cw * ch
    return np.minimum(inter / union, 1.0) - np.maximum(enclose - union, 0.0) / enclose


def nms(dets: Iterable[Detection], iou_threshold: float = 0.5) -> list[Detection]:
    """Greedy non-maximum suppression.

    Detections are visited in descending score order (stable on ties, so equal
    scores keep input order); a detection is dropped when its IoU with an
    already kept one exceeds ``iou_threshold``.
    """
    if not 0.0 <= iou_threshold <= 1.0:
        raise ValueError(f"iou_threshold must lie in [0, 1], got {iou_threshold}")
    ordered = sorted(dets, key=lambda d: -d.score)
    kept: list[Detection] = []
    for det in ordered:
        if all(iou(det.box, k.box) <= iou_threshold for k in kept):
            kept.append(det)
    return kept


@dataclass(frozen=True)
class AffineTransform:
    """2x3 affine map [A | t] acting on pixel coordinates: p' = A p + t."""

    matrix: tuple[tuple[float, float, float], tuple[float, float, float]]

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.shape != (2, 3):
            raise ValueError(f"affine matrix must be 2x3, got shape {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ValueError("affine matrix entries must be finite")

    @classmethod
    def from_array(cls, m) -> "AffineTransform":
        m = np.asarray(m, dtype=float)
        return cls(tuple(tuple(float(v) for v in row) for row in m))

    @classmethod
    def identity(cls) -> "AffineTransform":
        return cls(((1.0, 0.0, 0.0), (0.0, 1.0, 0.0)))

    @classmethod
    def translation(cls, dx: float, dy: float) -> "AffineTransform":
        return cls(((1.0, 0.0, float(dx)), (0.0, 1.0, float(dy))))

    @classmethod
    def scaling(cls, sx: float, sy: float | None = None) -> "AffineTransform":
        sy = sx if sy is None else sy
        return cls(((float(sx), 0.0, 0.0), (0.0, float(sy), 0.0)))

    def as_array(self) -> np.ndarray:
        return np.asarray(self.matrix, dtype=float)

    @property
    def determinant(self) -> float:
        m = self.as_array()
        return float(m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0])

    def compose(self, other: "AffineTransform") -> "AffineTransform":
        """Return the map ``self ∘ other`` (apply ``other`` first)."""
        a = np.vstack([self.as_array(), [0.0, 0.0, 1.0]])
        b = np.vstack([other.as_array(), [0.0, 0.0, 1.0]])
        return AffineTransform.from_array((a @ b)[:2])

    def apply_points(self, pts: np.ndarray) -> np.ndarray:
        m = self.as_array()
        return pts @ m[:, :2].T + m[:, 2]


def invert(t: AffineTransform, eps: float = 1e-12) -> AffineTransform:
    det = t.determinant
    if abs(det) <= eps:
        raise DegenerateTransformError(
            f"affine augmentation is not invertible (det={det:.3g}); boxes cannot be mapped back"
        )
    m = t.as_array()
    lin_inv = np.linalg.inv(m[:, :2])
    return AffineTransform.from_array(np.hstack([lin_inv, (-lin_inv @ m[:, 2])[:, None]]))


def apply_affine(t: AffineTransform, b: BoundingBox) -> BoundingBox:
    """Map the four corners of ``b`` and return their axis-aligned enclosure."""
    if abs(t.determinant) <= 1e-12:
        raise DegenerateTransformError(f"affine augmentation is degenerate (det={t.determinant:.3g})")
    pts = np.array([[b.x, b.y], [b.x2, b.y], [b.x, b.y2], [b.x2, b.y2]], dtype=float)
    out = t.apply_points(pts)
    x1, y1 = out.min(axis=0)
    x2, y2 = out.max(axis=0)
    return BoundingBox.from_corners(x1, y1, x2, y2)

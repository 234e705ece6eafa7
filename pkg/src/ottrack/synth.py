"""Synthetic tracking sequences with controllable domain-gap knobs.

Objects move in horizontal lanes across a canvas. Each lane is at least one
box tall, so objects in different lanes never overlap; the ``crossing``
motion puts two objects in one lane, moving in opposite directions.
A detector is simulated on top of the ground truth: jittered boxes, depressed
scores, dropped objects and spurious boxes. Each identity gets a unit
appearance anchor; ``appearance_separation`` sets the angle between anchors
(1 = orthogonal, 0 = identical).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .agreement import View
from .geometry import AffineTransform, BoundingBox, Detection, apply_affine, invert, iou, iou_matrix
from .opa import SampledProposals

MOTIONS = ("linear", "crossing", "sinusoidal")
BASE_SCORE = 0.9


@dataclass(frozen=True)
class GroundTruthObject:
    box: BoundingBox
    id: int

    def __post_init__(self):
        if self.id < 1:
            raise ValueError(f"ground-truth ids are positive, got {self.id}")


@dataclass
class SynthConfig:
    n_objects: int = 10
    n_frames: int = 100
    motion: str = "linear"
    fn_rate: float = 0.0
    fp_rate: float = 0.0
    loc_noise_sigma: float = 0.0
    score_depression: float = 0.0
    score_noise_sigma: float = 0.0
    embed_dim: int = 512
    embed_noise_sigma: float = 0.0
    appearance_separation: float = 1.0
    seed: int = 0
    canvas_width: float = 1920.0
    canvas_height: float = 1080.0
    box_width: float = 40.0
    box_height: float = 80.0
    max_speed: float = 4.0
    # vertical offset between the two crossing cohorts, in box heights
    crossing_offset: float = 0.5
    fp_score_low: float = 0.1
    fp_score_high: float = 0.6

    def __post_init__(self):
        if self.motion not in MOTIONS:
            raise ValueError(f"motion must be one of {MOTIONS}, got {self.motion!r}")
        for name in ("fn_rate", "fp_rate", "score_depression", "appearance_separation"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        for name in ("loc_noise_sigma", "score_noise_sigma", "embed_noise_sigma", "max_speed", "crossing_offset"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative, got {getattr(self, name)}")
        if self.n_objects < 0 or self.n_frames < 1 or self.embed_dim < 1:
            raise ValueError("n_objects >= 0, n_frames >= 1 and embed_dim >= 1 are required")
        if self.box_width <= 0 or self.box_height <= 0:
            raise ValueError("box size must be positive")
        if self.box_width > self.canvas_width or self.box_height > self.canvas_height:
            raise ValueError("boxes must fit on the canvas")
        if not 0.0 <= self.fp_score_low <= self.fp_score_high <= 1.0:
            raise ValueError("fp score range must satisfy 0 <= low <= high <= 1")


@dataclass
class SyntheticSequence:
    gt: list[list[GroundTruthObject]]
    detections: list[list[Detection]]
    embeddings: list[list[np.ndarray]]
    # ground-truth id behind each detection, -1 for spurious ones
    sources: list[list[int]] = field(default_factory=list)
    anchors: Optional[np.ndarray] = None

    def tracker_input(self, with_embeddings: bool = True):
        return [
            [(d, e if with_embeddings else None) for d, e in zip(dets, embs)]
            for dets, embs in zip(self.detections, self.embeddings)
        ]


def _trajectories(cfg: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    """Unclipped top-left corners, shape (n_objects, n_frames, 2)."""
    n, T = cfg.n_objects, cfg.n_frames
    W, H, w, h = cfg.canvas_width, cfg.canvas_height, cfg.box_width, cfg.box_height
    t = np.arange(T, dtype=float)
    out = np.zeros((n, T, 2))
    if n == 0:
        return out

    n_lanes = math.ceil(n / 2) if cfg.motion == "crossing" else n
    spacing = H / n_lanes
    slack = max(0.0, (spacing - h) / 2.0)
    lane_top = (np.arange(n_lanes) + 0.5) * spacing - h / 2.0
    lane_order = rng.permutation(n_lanes)

    if cfg.motion == "crossing":
        span = min(W - w, cfg.max_speed * (T - 1))
        for lane in range(n_lanes):
            left = rng.uniform(0.0, W - w - span)
            members = [k for k in (2 * lane, 2 * lane + 1) if k < n]
            for k in members:
                direction = 1.0 if k % 2 == 0 else -1.0
                start = left if direction > 0 else left + span
                frac = t / (T - 1) if T > 1 else t
                out[k, :, 0] = start + direction * span * frac
                shift = (-0.5 if direction > 0 else 0.5) * cfg.crossing_offset * h
                out[k, :, 1] = np.clip(lane_top[lane_order[lane]] + shift, 0.0, H - h)
        return out

    for k in range(n):
        top = lane_top[lane_order[k]]
        speed = rng.uniform(0.25, 1.0) * cfg.max_speed * rng.choice([-1.0, 1.0])
        travel = abs(speed) * (T - 1)
        if cfg.motion == "linear":
            if travel <= W - w:
                lo = 0.0 if speed > 0 else travel
                x0 = rng.uniform(lo, lo + (W - w - travel))
            else:
                x0 = rng.uniform(0.0, W - w)
            vy = rng.uniform(-1.0, 1.0) * slack / max(T - 1, 1)
            out[k, :, 0] = x0 + speed * t
            out[k, :, 1] = top + vy * t
        else:
            amp_x = 5.0 * cfg.max_speed
            amp_y = 0.8 * slack
            px, py = rng.uniform(30.0, 60.0), rng.uniform(20.0, 40.0)
            phx, phy = rng.uniform(0.0, 2 * np.pi, size=2)
            reach = travel + 2 * amp_x
            if reach <= W - w:
                lo = amp_x + (0.0 if speed > 0 else travel)
                x0 = rng.uniform(lo, lo + (W - w - reach))
            else:
                x0 = rng.uniform(0.0, W - w)
            out[k, :, 0] = x0 + speed * t + amp_x * np.sin(2 * np.pi * t / px + phx)
            out[k, :, 1] = top + amp_y * np.sin(2 * np.pi * t / py + phy)
    return out


def _clip_box(x: float, y: float, cfg: SynthConfig) -> Optional[BoundingBox]:
    x1, y1 = max(x, 0.0), max(y, 0.0)
    x2 = min(x + cfg.box_width, cfg.canvas_width)
    y2 = min(y + cfg.box_height, cfg.canvas_height)
    if x2 - x1 < 1.0 or y2 - y1 < 1.0:
        return None
    return BoundingBox.from_corners(x1, y1, x2, y2)


def appearance_anchors(n: int, dim: int, separation: float, rng: np.random.Generator) -> np.ndarray:
    """Unit anchors with pairwise cosine ``cos(theta)^2``, ``theta = separation * pi / 2``.

    Exact when ``dim > n``; otherwise the per-identity directions are only
    approximately orthogonal.
    """
    theta = separation * np.pi / 2.0
    if dim > n:
        q, _ = np.linalg.qr(rng.standard_normal((dim, n + 1)))
        common, own = q[:, 0], q[:, 1:].T
    else:
        common = rng.standard_normal(dim)
        common /= np.linalg.norm(common)
        own = rng.standard_normal((n, dim))
        own -= (own @ common)[:, None] * common[None, :]
        own /= np.maximum(np.linalg.norm(own, axis=1, keepdims=True), 1e-12)
    anchors = np.cos(theta) * common[None, :] + np.sin(theta) * own
    return anchors / np.linalg.norm(anchors, axis=1, keepdims=True)


def _noisy_unit(v: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    # noise of expected norm ~sigma, independent of the dimension
    if sigma > 0:
        v = v + sigma * rng.standard_normal(v.size) / math.sqrt(v.size)
    return v / np.linalg.norm(v)


def _jitter(box: BoundingBox, sigma: float, rng: np.random.Generator) -> BoundingBox:
    if sigma == 0:
        return box
    dx, dy, dw, dh = rng.normal(0.0, sigma, size=4)
    return BoundingBox(box.x + dx, box.y + dy, max(1.0, box.w + dw), max(1.0, box.h + dh))


def generate(cfg: SynthConfig) -> SyntheticSequence:
    """Generate ground truth, simulated detections and embeddings; fully determined by ``cfg.seed``."""
    rng = np.random.default_rng(cfg.seed)
    traj = _trajectories(cfg, rng)
    anchors = appearance_anchors(cfg.n_objects, cfg.embed_dim, cfg.appearance_separation, rng)
    seq = SyntheticSequence([], [], [], [], anchors)
    for f in range(cfg.n_frames):
        gt_frame, dets, embs, srcs = [], [], [], []
        for k in range(cfg.n_objects):
            box = _clip_box(traj[k, f, 0], traj[k, f, 1], cfg)
            if box is None:
                continue
            gt_frame.append(GroundTruthObject(box, k + 1))
            if cfg.fn_rate > 0 and rng.random() < cfg.fn_rate:
                continue
            score = BASE_SCORE - cfg.score_depression
            if cfg.score_noise_sigma > 0:
                score += rng.normal(0.0, cfg.score_noise_sigma)
            dets.append(Detection(_jitter(box, cfg.loc_noise_sigma, rng), float(np.clip(score, 0.0, 1.0))))
            embs.append(_noisy_unit(anchors[k], cfg.embed_noise_sigma, rng))
            srcs.append(k + 1)
        n_fp = rng.binomial(cfg.n_objects, cfg.fp_rate) if cfg.fp_rate > 0 else 0
        for _ in range(n_fp):
            w = cfg.box_width * rng.uniform(0.7, 1.3)
            h = cfg.box_height * rng.uniform(0.7, 1.3)
            box = BoundingBox(
                rng.uniform(0.0, max(cfg.canvas_width - w, 0.0)), rng.uniform(0.0, max(cfg.canvas_height - h, 0.0)), w, h
            )
            dets.append(Detection(box, float(rng.uniform(cfg.fp_score_low, cfg.fp_score_high))))
            embs.append(_noisy_unit(rng.standard_normal(cfg.embed_dim), 0.0, rng))
            srcs.append(-1)
        seq.gt.append(gt_frame)
        seq.detections.append(dets)
        seq.embeddings.append(embs)
        seq.sources.append(srcs)
    return seq


@dataclass
class ViewConfig:
    """How two augmented detector runs differ from the reference detections."""

    loc_noise_sigma: float = 0.0
    score_noise_sigma: float = 0.0
    # probability that a spurious detection shows up in a given view
    fp_persistence: float = 0.5
    affine: bool = False
    max_shift: float = 20.0
    max_scale_change: float = 0.2


def random_affine(cfg: ViewConfig, rng: np.random.Generator) -> AffineTransform:
    s = 1.0 + rng.uniform(-cfg.max_scale_change, cfg.max_scale_change)
    dx, dy = rng.uniform(-cfg.max_shift, cfg.max_shift, size=2)
    return AffineTransform(((s, 0.0, float(dx)), (0.0, s, float(dy))))


def dual_views(
    dets: Sequence[Detection],
    cfg: ViewConfig,
    rng: np.random.Generator,
    spurious: Optional[Sequence[bool]] = None,
) -> tuple[View, View, tuple[Optional[AffineTransform], Optional[AffineTransform]]]:
    """Two independently re-noised copies of a frame's detections.

    View A stays in image coordinates; with ``cfg.affine`` view B is produced
    under a random scale + translation and carries its inverse.
    """
    spurious = list(spurious) if spurious is not None else [False] * len(dets)

    def one_view():
        out = []
        for det, fp in zip(dets, spurious):
            if fp and rng.random() >= cfg.fp_persistence:
                continue
            score = det.score + (rng.normal(0.0, cfg.score_noise_sigma) if cfg.score_noise_sigma > 0 else 0.0)
            out.append(Detection(_jitter(det.box, cfg.loc_noise_sigma, rng), float(np.clip(score, 0.0, 1.0))))
        return out

    view_a = View(one_view())
    dets_b = one_view()
    if not cfg.affine:
        return view_a, View(dets_b), (None, None)
    t = random_affine(cfg, rng)
    inv = invert(t)
    view_b = View([Detection(apply_affine(t, d.box), d.score) for d in dets_b], transformed=True, inverse=inv)
    return view_a, view_b, (None, inv)


def sample_proposals(
    gt_frame: Sequence[GroundTruthObject],
    n_pos: int,
    n_neg: int,
    rng: np.random.Generator,
    pos_iou: float = 0.5,
    jitter: float = 0.1,
    n_bins: int = 3,
    canvas: tuple[float, float] = (1920.0, 1080.0),
    max_tries: int = 20000,
) -> SampledProposals:
    """Positive and negative proposals around ground truth.

    Each object owns ``n_pos`` jittered copies overlapping it by at least
    ``pos_iou`` (and more than any other object). ``n_neg`` negatives overlap
    every object by less than ``pos_iou`` and are spread evenly over
    ``n_bins`` IoU bins in ``[0, pos_iou)``.
    """
    if not gt_frame:
        raise ValueError("proposal sampling needs at least one ground-truth object")
    if n_pos < 0 or n_neg < 0:
        raise ValueError("proposal counts must be non-negative")
    boxes = [o.box for o in gt_frame]
    out = SampledProposals()

    for owner, gt_box in enumerate(boxes):
        got = tries = 0
        while got < n_pos:
            tries += 1
            if tries > max_tries:
                raise ValueError(f"could not sample {n_pos} positives with IoU >= {pos_iou} for object {owner}")
            cand = BoundingBox(
                gt_box.x + rng.normal(0.0, jitter * gt_box.w) if jitter else gt_box.x,
                gt_box.y + rng.normal(0.0, jitter * gt_box.h) if jitter else gt_box.y,
                max(1.0, gt_box.w * (1.0 + rng.normal(0.0, jitter))) if jitter else gt_box.w,
                max(1.0, gt_box.h * (1.0 + rng.normal(0.0, jitter))) if jitter else gt_box.h,
            )
            ious = iou_matrix([cand], boxes)[0]
            if ious[owner] >= pos_iou and ious[owner] >= ious.max():
                out.positives.append((cand, owner))
                got += 1

    edges = np.linspace(0.0, pos_iou, n_bins + 1)
    quota = np.full(n_bins, n_neg // n_bins)
    quota[: n_neg % n_bins] += 1
    bins: list[list[BoundingBox]] = [[] for _ in range(n_bins)]
    tries = 0
    W, H = canvas
    while any(len(b) < q for b, q in zip(bins, quota)):
        tries += 1
        if tries > max_tries:
            raise ValueError(f"could not sample {n_neg} negatives spread over {n_bins} IoU bins")
        ref = boxes[rng.integers(len(boxes))]
        if rng.random() < 0.25:
            w, h = ref.w * rng.uniform(0.5, 1.5), ref.h * rng.uniform(0.5, 1.5)
            cand = BoundingBox(rng.uniform(0.0, max(W - w, 1.0)), rng.uniform(0.0, max(H - h, 1.0)), w, h)
        else:
            cand = BoundingBox(
                ref.x + rng.uniform(-1.5, 1.5) * ref.w,
                ref.y + rng.uniform(-1.5, 1.5) * ref.h,
                ref.w * rng.uniform(0.6, 1.6),
                ref.h * rng.uniform(0.6, 1.6),
            )
        best = max(iou(cand, b) for b in boxes)
        if best >= pos_iou:
            continue
        k = min(int(np.searchsorted(edges, best, side="right")) - 1, n_bins - 1)
        if len(bins[k]) < quota[k]:
            bins[k].append(cand)
    out.negatives = [b for bucket in bins for b in bucket]
    return out


def anchor_embedder(
    gt_frame: Sequence[GroundTruthObject],
    anchors: np.ndarray,
    rng: np.random.Generator,
    sigma: float = 0.0,
    fg_iou: float = 0.5,
):
    """Embedding provider: boxes overlapping an object by ``fg_iou`` get its (noisy) anchor.

    Other boxes get random unit vectors.
    """
    gt_boxes = [o.box for o in gt_frame]

    def embed(boxes):
        out = []
        ious = iou_matrix(list(boxes), gt_boxes) if gt_boxes and len(boxes) else np.zeros((len(boxes), 0))
        for k in range(len(boxes)):
            if ious.shape[1] and ious[k].max() >= fg_iou:
                obj = gt_frame[int(np.argmax(ious[k]))]
                out.append(_noisy_unit(anchors[obj.id - 1], sigma, rng))
            else:
                out.append(_noisy_unit(rng.standard_normal(anchors.shape[1]), 0.0, rng))
        return np.array(out).reshape(len(out), anchors.shape[1])

    return embed

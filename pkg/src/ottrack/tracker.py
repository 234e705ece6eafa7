"""Tracklet state machine with pluggable association.

Frame 0 initializes one track per confident detection; every later frame
associates live tracks with detections, updates matched tracks, ages
unmatched ones and spawns tracks from leftover confident detections. There is
no motion model: a track's predicted box is its last box.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy.special import softmax

from .geometry import BoundingBox, Detection, iou_matrix
from .opa import marginals_one_to_one
from .transport import SinkhornConfig, cosine_cost, extract_hard_assignment, sinkhorn_solve


class Association(str, enum.Enum):
    BISOFTMAX = "bisoftmax"
    OT_SINKHORN = "ot_sinkhorn"
    IOU_GREEDY = "iou_greedy"

    @classmethod
    def parse(cls, value) -> "Association":
        if isinstance(value, cls):
            return value
        aliases = {"ot": cls.OT_SINKHORN, "iou": cls.IOU_GREEDY}
        return aliases.get(value) or cls(value)


class TrackStatus(str, enum.Enum):
    ACTIVE = "active"
    LOST = "lost"
    REMOVED = "removed"


@dataclass
class TrackerConfig:
    init_score_threshold: float = 0.5
    low_threshold: float = 0.3
    match_threshold: float = 0.5
    patience: int = 10
    ema_momentum: float = 0.9
    association: Association = Association.BISOFTMAX
    # dot products of unit embeddings are scaled by this before the bi-softmax
    similarity_scale: float = 10.0
    # bi-softmax pairs also need this cosine similarity; -1 disables the gate
    min_cosine: float = 0.3
    allow_low_score_spawn: bool = False
    sinkhorn: SinkhornConfig = field(default_factory=SinkhornConfig)

    def __post_init__(self):
        self.association = Association.parse(self.association)
        if not 0.0 <= self.low_threshold <= self.init_score_threshold <= 1.0:
            raise ValueError(
                "thresholds must satisfy 0 <= low_threshold <= init_score_threshold <= 1, got "
                f"{self.low_threshold} and {self.init_score_threshold}"
            )
        if not 0.0 <= self.ema_momentum <= 1.0:
            raise ValueError(f"ema_momentum must lie in [0, 1], got {self.ema_momentum}")
        if self.patience < 0:
            raise ValueError(f"patience must be >= 0, got {self.patience}")


@dataclass
class Track:
    id: int
    box: BoundingBox
    embedding: Optional[np.ndarray]
    score: float = 1.0
    status: TrackStatus = TrackStatus.ACTIVE
    frames_since_seen: int = 0
    age: int = 1


@dataclass
class TrackerState:
    tracks: list[Track] = field(default_factory=list)
    next_id: int = 1
    frame: int = 0

    def live(self) -> list[Track]:
        return [t for t in self.tracks if t.status is not TrackStatus.REMOVED]

    def visible(self) -> list[Track]:
        """Tracks updated by a detection in the latest frame."""
        return [t for t in self.tracks if t.status is TrackStatus.ACTIVE and t.frames_since_seen == 0]


DetectionInput = tuple[Detection, Optional[np.ndarray]]


def _unit(v) -> Optional[np.ndarray]:
    if v is None:
        return None
    v = np.asarray(v, dtype=float).ravel()
    n = np.linalg.norm(v)
    if n == 0:
        raise ValueError("embedding has zero norm")
    return v / n


def _spawn(state: TrackerState, det: Detection, emb) -> Track:
    tr = Track(id=state.next_id, box=det.box, embedding=_unit(emb), score=det.score)
    state.next_id += 1
    state.tracks.append(tr)
    return tr


def initialize(dets: Sequence[DetectionInput], cfg: Optional[TrackerConfig] = None) -> TrackerState:
    """Start a sequence: every detection scoring at least the init threshold becomes a track."""
    cfg = cfg or TrackerConfig()
    state = TrackerState()
    for det, emb in dets:
        if det.score >= cfg.init_score_threshold:
            _spawn(state, det, emb)
    return state


def bisoftmax_scores(tracks_emb, dets_emb) -> np.ndarray:
    """Mean of the track-wise and detection-wise softmax over raw dot products."""
    t = np.asarray(tracks_emb, dtype=float)
    d = np.asarray(dets_emb, dtype=float)
    if t.size == 0 or d.size == 0:
        return np.zeros((len(t), len(d)))
    sim = np.atleast_2d(t) @ np.atleast_2d(d).T
    return 0.5 * (softmax(sim, axis=1) + softmax(sim, axis=0))


def _greedy_from_scores(scores: np.ndarray, floor: float, order: Sequence[int]) -> list[tuple[int, int]]:
    """Detections in ``order`` each take their best free track if the score clears ``floor``."""
    taken: set[int] = set()
    pairs = []
    for j in order:
        col = scores[:, j].copy()
        if taken:
            col[list(taken)] = -np.inf
        i = int(np.argmax(col))
        if col[i] >= floor:
            pairs.append((i, j))
            taken.add(i)
    return pairs


def _associate_bisoftmax(tracks, dets, cfg) -> list[tuple[int, int]]:
    t_emb = np.stack([tr.embedding for tr in tracks])
    d_emb = np.stack([_unit(e) for _, e in dets])
    scores = bisoftmax_scores(cfg.similarity_scale * t_emb, d_emb)
    cos = t_emb @ d_emb.T
    scores = np.where(cos >= cfg.min_cosine, scores, -np.inf)
    order = sorted(range(len(dets)), key=lambda j: -dets[j][0].score)
    return _greedy_from_scores(scores, cfg.match_threshold, order)


def _associate_ot(tracks, dets, cfg) -> list[tuple[int, int]]:
    cost = cosine_cost([tr.embedding for tr in tracks], [e for _, e in dets])
    plan = sinkhorn_solve(cost, marginals_one_to_one(len(tracks), len(dets)), cfg.sinkhorn)
    hard = extract_hard_assignment(plan)
    return [(i, j) for i, j in hard.pairs if cost.values[i, j] <= 1.0 - cfg.match_threshold]


def _associate_iou(tracks, dets, cfg) -> list[tuple[int, int]]:
    ious = iou_matrix([tr.box for tr in tracks], [d.box for d, _ in dets])
    pairs = []
    used_r, used_c = set(), set()
    # global greedy: highest IoU first, stable on ties (row-major order)
    flat = np.argsort(-ious, axis=None, kind="stable")
    for k in flat:
        i, j = divmod(int(k), ious.shape[1])
        if ious[i, j] < cfg.match_threshold:
            break
        if i in used_r or j in used_c:
            continue
        pairs.append((i, j))
        used_r.add(i)
        used_c.add(j)
    return sorted(pairs)


_ASSOCIATORS = {
    Association.BISOFTMAX: _associate_bisoftmax,
    Association.OT_SINKHORN: _associate_ot,
    Association.IOU_GREEDY: _associate_iou,
}


def step(
    state: TrackerState, dets: Sequence[DetectionInput], cfg: Optional[TrackerConfig] = None
) -> tuple[TrackerState, list[tuple[int, int]]]:
    """Advance ``state`` by one frame.

    Returns the updated state (``state`` itself, mutated) and the list of
    ``(track_id, detection_index)`` pairs for this frame, including tracks
    spawned from unmatched detections.
    """
    cfg = cfg or TrackerConfig()
    state.frame += 1
    kept = [k for k, (d, _) in enumerate(dets) if d.score >= cfg.low_threshold]
    frame_dets = [dets[k] for k in kept]
    if cfg.association is not Association.IOU_GREEDY and any(e is None for _, e in frame_dets):
        raise ValueError(f"{cfg.association.value} association needs an embedding for every detection")

    tracks = state.live()
    pairs: list[tuple[int, int]] = []
    if tracks and frame_dets:
        pairs = _ASSOCIATORS[cfg.association](tracks, frame_dets, cfg)

    assignments = []
    matched_tracks = set()
    matched_dets = set()
    for i, j in pairs:
        tr = tracks[i]
        det, emb = frame_dets[j]
        tr.box = det.box
        tr.score = det.score
        if emb is not None:
            new = _unit(emb)
            if tr.embedding is None:
                tr.embedding = new
            else:
                mixed = cfg.ema_momentum * tr.embedding + (1.0 - cfg.ema_momentum) * new
                norm = np.linalg.norm(mixed)
                tr.embedding = mixed / norm if norm > 0 else new
        tr.status = TrackStatus.ACTIVE
        tr.frames_since_seen = 0
        matched_tracks.add(tr.id)
        matched_dets.add(j)
        assignments.append((tr.id, kept[j]))

    for tr in tracks:
        tr.age += 1
        if tr.id in matched_tracks:
            continue
        tr.frames_since_seen += 1
        tr.status = TrackStatus.REMOVED if tr.frames_since_seen > cfg.patience else TrackStatus.LOST

    for j, (det, emb) in enumerate(frame_dets):
        if j in matched_dets:
            continue
        if det.score >= cfg.init_score_threshold or cfg.allow_low_score_spawn:
            tr = _spawn(state, det, emb)
            assignments.append((tr.id, kept[j]))

    state.tracks = [t for t in state.tracks if t.status is not TrackStatus.REMOVED]
    return state, sorted(assignments)


def iou_greedy_step(state: TrackerState, dets: Sequence[DetectionInput], cfg: Optional[TrackerConfig] = None):
    cfg = replace(cfg or TrackerConfig(), association=Association.IOU_GREEDY)
    return step(state, dets, cfg)


@dataclass
class FrameOutput:
    track_id: int
    box: BoundingBox
    score: float


def track_sequence(
    frames: Sequence[Sequence[DetectionInput]], cfg: Optional[TrackerConfig] = None
) -> list[list[FrameOutput]]:
    """Run the tracker over a whole sequence; returns per-frame (id, box, score) outputs."""
    cfg = cfg or TrackerConfig()
    outputs: list[list[FrameOutput]] = []
    state: Optional[TrackerState] = None
    for dets in frames:
        if state is None:
            state = initialize(dets, cfg)
            frame_out = [FrameOutput(t.id, t.box, t.score) for t in state.tracks]
        else:
            state, assigned = step(state, dets, cfg)
            frame_out = [FrameOutput(tid, dets[k][0].box, dets[k][0].score) for tid, k in assigned]
        outputs.append(sorted(frame_out, key=lambda o: o.track_id))
    return outputs

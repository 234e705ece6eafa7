"""CLEAR-MOT, identity and detection metrics for a single object class.

Frames are given as aligned sequences; frame ``k`` of the ground truth is
compared with frame ``k`` of the hypotheses. Objects are ``(id, box)`` pairs
(anything with ``.id`` and ``.box`` attributes also works).
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .geometry import BoundingBox, iou_matrix

MT_RATIO = 0.8
ML_RATIO = 0.2


@dataclass
class SequenceEvalResult:
    mota: float
    idf1: float
    mt: int
    ml: int
    id_switches: int
    fp: int
    fn: int
    gt_count: int
    map_proxy: float = 0.0
    idtp: int = 0
    idfp: int = 0
    idfn: int = 0
    n_gt_tracks: int = 0

    def as_dict(self) -> dict:
        return asdict(self)


def _split(obj):
    if isinstance(obj, tuple):
        return int(obj[0]), obj[1]
    return int(obj.id), obj.box


def _frames(seq) -> list[list[tuple[int, BoundingBox]]]:
    return [[_split(o) for o in frame] for frame in seq]


def _match_frame(gt_boxes, hyp_boxes, iou_threshold, forced: dict[int, int]) -> list[tuple[int, int]]:
    """Optimal IoU matching after honouring ``forced`` (gt index -> hyp index) pairs."""
    if not gt_boxes or not hyp_boxes:
        return []
    ious = iou_matrix(gt_boxes, hyp_boxes)
    pairs = []
    used_g, used_h = set(), set()
    # two ground truths may share a previous hypothesis; the better overlap keeps it
    for g, h in sorted(forced.items(), key=lambda gh: (-ious[gh[0], gh[1]], gh[0])):
        if ious[g, h] >= iou_threshold and h not in used_h:
            pairs.append((g, h))
            used_g.add(g)
            used_h.add(h)
    free_g = [g for g in range(len(gt_boxes)) if g not in used_g]
    free_h = [h for h in range(len(hyp_boxes)) if h not in used_h]
    if free_g and free_h:
        sub = ious[np.ix_(free_g, free_h)]
        valid = sub >= iou_threshold
        # infeasible pairs get a cost that no feasible combination can beat
        cost = np.where(valid, 1.0 - sub, len(free_g) + len(free_h) + 1.0)
        rows, cols = linear_sum_assignment(cost)
        pairs += [(free_g[r], free_h[c]) for r, c in zip(rows, cols) if valid[r, c]]
    return pairs


def evaluate(gt: Sequence, results: Sequence, iou_threshold: float = 0.5, scores: Sequence | None = None) -> SequenceEvalResult:
    """CLEAR-MOT and IDF1 for one sequence.

    A ground-truth object keeps its previous hypothesis whenever that
    hypothesis is present and still overlaps by ``iou_threshold``; the rest is
    matched by a minimum-(1 - IoU) assignment. An id switch is counted when a
    ground-truth object is matched to a different hypothesis than the last one
    it was matched to.

    ``scores`` optionally gives per-frame confidences aligned with
    ``results`` and feeds the detection AP in ``map_proxy``.
    """
    if len(gt) != len(results):
        raise ValueError(f"misaligned frames: {len(gt)} ground-truth frames vs {len(results)} result frames")
    gt_f = _frames(gt)
    hyp_f = _frames(results)
    for k, frame in enumerate(gt_f + hyp_f):
        ids = [i for i, _ in frame]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate ids within a frame ({k % max(len(gt_f), 1)})")

    fp = fn = idsw = 0
    gt_count = 0
    last_match: dict[int, int] = {}
    gt_frames_present: dict[int, int] = defaultdict(int)
    gt_frames_tracked: dict[int, int] = defaultdict(int)
    # co-occurrence counts for the identity measures
    overlap: dict[tuple[int, int], int] = defaultdict(int)
    gt_total = defaultdict(int)
    hyp_total = defaultdict(int)

    for gframe, hframe in zip(gt_f, hyp_f):
        g_ids = [i for i, _ in gframe]
        h_ids = [i for i, _ in hframe]
        g_boxes = [b for _, b in gframe]
        h_boxes = [b for _, b in hframe]
        gt_count += len(gframe)
        for gid in g_ids:
            gt_frames_present[gid] += 1
            gt_total[gid] += 1
        for hid in h_ids:
            hyp_total[hid] += 1

        h_pos = {hid: k for k, hid in enumerate(h_ids)}
        forced = {g: h_pos[last_match[gid]] for g, gid in enumerate(g_ids) if last_match.get(gid) in h_pos}
        pairs = _match_frame(g_boxes, h_boxes, iou_threshold, forced)
        for g, h in pairs:
            gid, hid = g_ids[g], h_ids[h]
            if gid in last_match and last_match[gid] != hid:
                idsw += 1
            last_match[gid] = hid
            gt_frames_tracked[gid] += 1
        fp += len(hframe) - len(pairs)
        fn += len(gframe) - len(pairs)

        if g_boxes and h_boxes:
            ious = iou_matrix(g_boxes, h_boxes)
            for g, h in zip(*np.nonzero(ious >= iou_threshold)):
                overlap[(g_ids[g], h_ids[h])] += 1

    mota = 1.0 - (fp + fn + idsw) / gt_count if gt_count else math.nan

    ratios = [gt_frames_tracked[g] / gt_frames_present[g] for g in gt_frames_present]
    mt = sum(r >= MT_RATIO for r in ratios)
    ml = sum(r <= ML_RATIO for r in ratios)

    idtp = _identity_true_positives(overlap, list(gt_total), list(hyp_total))
    total_gt = sum(gt_total.values())
    total_hyp = sum(hyp_total.values())
    idfp = total_hyp - idtp
    idfn = total_gt - idtp
    denom = 2 * idtp + idfp + idfn
    idf1 = 2 * idtp / denom if denom else 1.0

    map_proxy = 0.0
    if scores is not None:
        dets = [[(b, s) for (_, b), s in zip(hf, sf)] for hf, sf in zip(hyp_f, scores)]
        map_proxy = detection_ap([[b for _, b in f] for f in gt_f], dets, iou_threshold)

    return SequenceEvalResult(
        mota=mota,
        idf1=idf1,
        mt=int(mt),
        ml=int(ml),
        id_switches=idsw,
        fp=fp,
        fn=fn,
        gt_count=gt_count,
        map_proxy=map_proxy,
        idtp=idtp,
        idfp=idfp,
        idfn=idfn,
        n_gt_tracks=len(gt_frames_present),
    )


def _identity_true_positives(overlap, gt_ids, hyp_ids) -> int:
    """Maximum total co-occurrence over one-to-one gt-id/hyp-id mappings."""
    if not overlap:
        return 0
    gi = {g: k for k, g in enumerate(gt_ids)}
    hi = {h: k for k, h in enumerate(hyp_ids)}
    w = np.zeros((len(gt_ids), len(hyp_ids)))
    for (g, h), n in overlap.items():
        w[gi[g], hi[h]] = n
    rows, cols = linear_sum_assignment(w, maximize=True)
    return int(round(w[rows, cols].sum()))


def match_detections(gt_frames, det_frames, iou_threshold: float = 0.5) -> tuple[int, int, int]:
    """One-to-one IoU matching of detections per frame; returns (tp, fp, fn)."""
    if len(gt_frames) != len(det_frames):
        raise ValueError("misaligned frames")
    tp = fp = fn = 0
    for g, d in zip(gt_frames, det_frames):
        d = [x[0] if isinstance(x, tuple) else x for x in d]
        pairs = _match_frame(list(g), list(d), iou_threshold, {})
        tp += len(pairs)
        fp += len(d) - len(pairs)
        fn += len(g) - len(pairs)
    return tp, fp, fn


def detection_ap(gt_frames, det_frames, iou_threshold: float = 0.5) -> float:
    """Single-class average precision with all-points interpolation.

    ``gt_frames[k]`` lists boxes; ``det_frames[k]`` lists ``(box, score)``.
    Detections are ranked by score (stable on ties) and each one greedily
    claims the highest-IoU unclaimed ground truth in its frame.
    """
    if len(gt_frames) != len(det_frames):
        raise ValueError("misaligned frames")
    n_gt = sum(len(f) for f in gt_frames)
    ranked = [(s, k, b) for k, frame in enumerate(det_frames) for b, s in frame]
    if n_gt == 0 or not ranked:
        return 0.0
    ranked.sort(key=lambda t: -t[0])
    claimed = [set() for _ in gt_frames]
    tp = np.zeros(len(ranked))
    for r, (_, k, box) in enumerate(ranked):
        gts = gt_frames[k]
        if not gts:
            continue
        ious = iou_matrix([box], gts)[0]
        for g in np.argsort(-ious, kind="stable"):
            if ious[g] < iou_threshold:
                break
            if g not in claimed[k]:
                claimed[k].add(int(g))
                tp[r] = 1
                break
    ctp = np.cumsum(tp)
    recall = ctp / n_gt
    precision = ctp / np.arange(1, len(ranked) + 1)
    mrec = np.concatenate([[0.0], recall, [1.0]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    idx = np.nonzero(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[idx + 1] - mrec[idx]) * mpre[idx + 1]))

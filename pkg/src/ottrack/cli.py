"""Command-line entry point: ``ottrack {synth,agree,track,eval,sinkhorn}``.

Flag values override the ``--config`` file, which overrides built-in defaults.
Every failure prints one ``error: ...`` line on stderr and exits with status 1.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
import warnings
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .agreement import EmptyAgreementWarning, View, agreement_loss, agreement_matrix, recover_proposals
from .metrics import evaluate, match_detections
from .mot_io import (
    EngineConfig,
    MotRecord,
    detections_to_records,
    format_mot_record,
    format_report,
    frames_from_records,
    read_config,
    read_embeddings,
    read_mot_file,
    records_to_detections,
    write_embeddings,
    write_mot_file,
)
from .opa import marginals_one_to_one
from .synth import dual_views, generate
from .tracker import Association, track_sequence
from .transport import Marginals, exact_assignment_oracle, sinkhorn_solve


class CliError(Exception):
    pass


def _load_config(path: Optional[str]) -> EngineConfig:
    return read_config(path) if path else EngineConfig()


def _fmt(v: float) -> str:
    return f"{v:.6f}"


# synth ------------------------------------------------------------------------


def cmd_synth(args) -> int:
    cfg = _load_config(args.config)
    synth_cfg = cfg.synth
    overrides = {k: v for k, v in (("seed", args.seed), ("motion", args.motion)) if v is not None}
    if overrides:
        synth_cfg = dataclasses.replace(synth_cfg, **overrides)
    seq = generate(synth_cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    gt_records = [
        MotRecord(f, o.id, o.box.x, o.box.y, o.box.w, o.box.h, 1.0) for f, frame in enumerate(seq.gt, start=1) for o in frame
    ]
    write_mot_file(gt_records, out / "gt.txt")
    write_mot_file(detections_to_records(seq.detections), out / "det.txt")
    write_embeddings(
        {f: dict(enumerate(embs)) for f, embs in enumerate(seq.embeddings, start=1) if embs}, out / "emb.txt"
    )

    rng = np.random.default_rng([synth_cfg.seed, 1])
    views_a, views_b = [], []
    for dets, srcs in zip(seq.detections, seq.sources):
        va, vb, _ = dual_views(dets, cfg.views, rng, [s < 0 for s in srcs])
        views_a.append(va.original_detections())
        views_b.append(vb.original_detections())
    write_mot_file(detections_to_records(views_a), out / "view_a.txt")
    write_mot_file(detections_to_records(views_b), out / "view_b.txt")
    n_dets = sum(len(d) for d in seq.detections)
    print(f"frames: {synth_cfg.n_frames}")
    print(f"objects: {synth_cfg.n_objects}")
    print(f"detections: {n_dets}")
    print(f"wrote: {out}")
    return 0


# agree ------------------------------------------------------------------------


def cmd_agree(args) -> int:
    cfg = _load_config(args.config)
    low = args.low_threshold if args.low_threshold is not None else cfg.tracker.low_threshold
    pair = args.pair_threshold if args.pair_threshold is not None else cfg.agreement.pair_threshold
    nms_thr = args.nms_threshold if args.nms_threshold is not None else cfg.agreement.nms_threshold
    gamma = args.gamma if args.gamma is not None else cfg.tracker.init_score_threshold

    recs_a, recs_b = read_mot_file(args.view_a), read_mot_file(args.view_b)
    n_frames = max([*recs_a, *recs_b, 0])
    gt_frames = None
    if args.gt:
        gt_recs = read_mot_file(args.gt)
        n_frames = max(n_frames, max(gt_recs, default=0))
        gt_frames = [[r.box for r in f] for f in frames_from_records(gt_recs, n_frames)]
    frames_a = records_to_detections(frames_from_records(recs_a, n_frames))
    frames_b = records_to_detections(frames_from_records(recs_b, n_frames))
    if not recs_a or not recs_b:
        print("warning: a view has no detections; nothing can be recovered", file=sys.stderr)

    losses, recovered = [], []
    for da, db in zip(frames_a, frames_b):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", EmptyAgreementWarning)
            losses.append(agreement_loss(agreement_matrix(View(da), View(db))))
        recovered.append(recover_proposals(da, db, low, pair, nms_thr))
    mean_loss = float(np.mean(losses)) if losses else 0.0

    if args.out:
        write_mot_file(detections_to_records(recovered), args.out)
    print(f"agreement_loss: {_fmt(mean_loss)}")
    print(f"recovered: {sum(len(r) for r in recovered)}")
    print(f"thresholded: {sum(sum(d.score >= gamma for d in f) for f in frames_a)}")
    if gt_frames is not None:
        n_gt = sum(len(f) for f in gt_frames)
        for name, dets in (("thresholded", [[d for d in f if d.score >= gamma] for f in frames_a]), ("recovered", recovered)):
            tp, fp, fn = match_detections(gt_frames, [[d.box for d in f] for f in dets])
            print(f"{name}_recall: {_fmt(tp / n_gt if n_gt else 0.0)}")
            print(f"{name}_fp_rate: {_fmt(fp / n_gt if n_gt else 0.0)}")
            print(f"{name}_fn_rate: {_fmt(fn / n_gt if n_gt else 0.0)}")
    return 0


# track ------------------------------------------------------------------------


def cmd_track(args) -> int:
    cfg = _load_config(args.config)
    tracker_cfg = cfg.tracker
    if args.association is not None:
        tracker_cfg = dataclasses.replace(tracker_cfg, association=Association.parse(args.association))
    needs_emb = tracker_cfg.association is not Association.IOU_GREEDY
    if needs_emb and not args.embeddings:
        raise CliError(f"{tracker_cfg.association.value} association needs --embeddings")

    det_recs = read_mot_file(args.detections)
    n_frames = args.n_frames or max(det_recs, default=0)
    frames = records_to_detections(frames_from_records(det_recs, n_frames))
    embs = read_embeddings(args.embeddings) if args.embeddings else {}
    inputs = []
    for f, dets in enumerate(frames, start=1):
        per = embs.get(f, {})
        if needs_emb:
            missing = [k for k in range(len(dets)) if k not in per]
            if missing:
                raise CliError(f"no embedding for frame {f} detection {missing[0]}")
        inputs.append([(d, per.get(k)) for k, d in enumerate(dets)])

    outputs = track_sequence(inputs, tracker_cfg)
    records = [
        MotRecord(f, o.track_id, o.box.x, o.box.y, o.box.w, o.box.h, o.score)
        for f, frame in enumerate(outputs, start=1)
        for o in frame
    ]
    if args.out:
        write_mot_file(records, args.out)
        print(f"tracks: {len({r.id for r in records})}")
    else:
        sys.stdout.writelines(format_mot_record(r) + "\n" for r in records)
    return 0


# eval -------------------------------------------------------------------------


def cmd_eval(args) -> int:
    gt_recs = read_mot_file(args.gt)
    res_recs = read_mot_file(args.results)
    n_frames = max(gt_recs, default=0)
    last_res = max(res_recs, default=0)
    if last_res > n_frames:
        raise CliError(f"misaligned frames: results reach frame {last_res}, ground truth ends at {n_frames}")
    gt = [[(r.id, r.box) for r in f] for f in frames_from_records(gt_recs, n_frames)]
    res_frames = frames_from_records(res_recs, n_frames)
    res = [[(r.id, r.box) for r in f] for f in res_frames]
    scores = [[r.conf for r in f] for f in res_frames]
    report = format_report(evaluate(gt, res, args.iou_threshold, scores=scores))
    if args.out:
        Path(args.out).write_text(report)
    sys.stdout.write(report)
    return 0


# sinkhorn ---------------------------------------------------------------------


def _read_matrix(path: str) -> np.ndarray:
    rows = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        try:
            rows.append([float(v) for v in line.split(",")])
        except ValueError:
            raise CliError(f"{path}:{lineno}: non-numeric entry in {line!r}") from None
    if not rows or len({len(r) for r in rows}) != 1:
        raise CliError(f"{path}: cost file must hold a non-empty rectangular matrix")
    return np.array(rows)


def _read_marginals(path: str) -> Marginals:
    m = [r for r in (line.strip() for line in Path(path).read_text().splitlines()) if r and not r.startswith("#")]
    if len(m) != 2:
        raise CliError(f"{path}: marginals file needs exactly two lines (p, then q)")
    try:
        p, q = ([float(v) for v in line.split(",")] for line in m)
    except ValueError:
        raise CliError(f"{path}: non-numeric marginal weight") from None
    return Marginals(np.array(p), np.array(q))


def cmd_sinkhorn(args) -> int:
    cfg = _load_config(args.config).transport
    overrides = {
        k: v
        for k, v in (
            ("reg_strength", args.reg),
            ("max_iterations", args.iters),
            ("convergence_tol", args.tol),
            ("slack_cost", args.slack_cost),
        )
        if v is not None
    }
    cfg = dataclasses.replace(cfg, **overrides)
    cost = _read_matrix(args.cost)
    if args.marginals == "one2one":
        marg = marginals_one_to_one(*cost.shape)
    else:
        marg = _read_marginals(args.marginals)
        if marg.p.size != cost.shape[0] or marg.q.size != cost.shape[1]:
            raise CliError(f"marginals of length {marg.p.size}/{marg.q.size} do not fit a {cost.shape} cost matrix")
        if not marg.is_feasible(1e-9 * max(1.0, float(marg.p.sum()))):
            raise CliError(f"infeasible marginals: sum(p)={marg.p.sum():.9g} but sum(q)={marg.q.sum():.9g}")
    plan = sinkhorn_solve(cost, marg, cfg)
    for row in plan.plan:
        print(",".join(_fmt(v) for v in row))
    print(f"converged: {str(plan.converged).lower()}")
    print(f"iterations: {plan.iterations_used}")
    print(f"log_domain: {str(cfg.use_log_domain).lower()}")
    print(f"row_violation: {np.abs(plan.plan.sum(axis=1) - marg.p).max():.3e}")
    print(f"col_violation: {np.abs(plan.plan.sum(axis=0) - marg.q).max():.3e}")
    print(f"transported_cost: {_fmt(plan.transported_cost(cost))}")
    if args.oracle:
        perm, best = exact_assignment_oracle(cost)
        print(f"oracle_permutation: {','.join(map(str, perm))}")
        print(f"oracle_cost: {_fmt(best)}")
    return 0


# wiring -----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ottrack", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic sequence")
    p.add_argument("--config")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--motion", choices=["linear", "crossing", "sinusoidal"])
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("agree", help="recover low-confidence detections agreed on by two views")
    p.add_argument("view_a")
    p.add_argument("view_b")
    p.add_argument("--config")
    p.add_argument("--low-threshold", type=float)
    p.add_argument("--pair-threshold", type=float)
    p.add_argument("--nms-threshold", type=float)
    p.add_argument("--gamma", type=float, help="high score threshold used for the comparison baseline")
    p.add_argument("--gt", help="ground truth for recall / FP-rate comparison")
    p.add_argument("--out")
    p.set_defaults(func=cmd_agree)

    p = sub.add_parser("track", help="track detections and write MOT-format results")
    p.add_argument("detections")
    p.add_argument("--embeddings")
    p.add_argument("--association", choices=["bisoftmax", "ot", "ot_sinkhorn", "iou", "iou_greedy"])
    p.add_argument("--config")
    p.add_argument("--n-frames", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("eval", help="CLEAR-MOT / IDF1 report")
    p.add_argument("gt")
    p.add_argument("results")
    p.add_argument("--iou-threshold", type=float, default=0.5)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sinkhorn", help="solve an entropic transport problem")
    p.add_argument("cost", help="comma-separated cost matrix, one row per line")
    p.add_argument("--config")
    p.add_argument("--reg", type=float)
    p.add_argument("--iters", type=int)
    p.add_argument("--tol", type=float)
    p.add_argument("--slack-cost", type=float)
    p.add_argument("--marginals", default="one2one", help="'one2one' or a file with p and q lines")
    p.add_argument("--oracle", action="store_true", help="also print the brute-force assignment")
    p.set_defaults(func=cmd_sinkhorn)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except BrokenPipeError:
        # downstream reader (e.g. ``head``) closed early; not our failure
        sys.stderr.close()
        return 0
    except (CliError, ValueError, OSError, FloatingPointError) as exc:
        msg = " ".join(str(exc).split())
        print(f"error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

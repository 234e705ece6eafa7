"""Readers and writers for MOT Challenge text files, embeddings, config and reports."""

from __future__ import annotations

import dataclasses
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Union

import numpy as np
import yaml

from .geometry import BoundingBox, Detection
from .metrics import SequenceEvalResult
from .synth import SynthConfig, ViewConfig
from .tracker import Association, TrackerConfig
from .transport import SinkhornConfig

PathLike = Union[str, Path]
MOT_FIELDS = 10


class FormatError(ValueError):
    """Malformed input file; the message carries the location."""


@dataclass
class MotRecord:
    frame: int
    id: int
    bb_left: float
    bb_top: float
    bb_width: float
    bb_height: float
    conf: float = -1.0
    x: float = -1.0
    y: float = -1.0
    z: float = -1.0

    @property
    def box(self) -> BoundingBox:
        return BoundingBox(self.bb_left, self.bb_top, self.bb_width, self.bb_height)


def _num(v: float) -> str:
    """Fixed 6-decimal rendering with trailing zeros stripped ("10", "0.9", "-1")."""
    s = f"{v:.6f}".rstrip("0").rstrip(".")
    return "0" if s in ("-0", "") else s


def read_mot_file(path: PathLike) -> dict[int, list[MotRecord]]:
    """Parse a comma-separated MOT file into records grouped by frame (ascending)."""
    frames: dict[int, list[MotRecord]] = defaultdict(list)
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != MOT_FIELDS:
                raise FormatError(f"{path}:{lineno}: expected {MOT_FIELDS} fields, got {len(parts)}: {line!r}")
            try:
                frame, tid = int(parts[0]), int(float(parts[1]))
                vals = [float(p) for p in parts[2:]]
            except ValueError:
                raise FormatError(f"{path}:{lineno}: non-numeric field in {line!r}") from None
            if frame < 1:
                raise FormatError(f"{path}:{lineno}: frame numbers start at 1, got {frame}: {line!r}")
            if not all(math.isfinite(v) for v in vals):
                raise FormatError(f"{path}:{lineno}: non-finite value in {line!r}")
            if vals[2] <= 0 or vals[3] <= 0:
                raise FormatError(f"{path}:{lineno}: box width/height must be positive: {line!r}")
            frames[frame].append(MotRecord(frame, tid, *vals))
    return dict(sorted(frames.items()))


def _flatten(records) -> list[MotRecord]:
    if isinstance(records, Mapping):
        return [r for frame in sorted(records) for r in records[frame]]
    return list(records)


def format_mot_record(r: MotRecord) -> str:
    vals = (r.bb_left, r.bb_top, r.bb_width, r.bb_height, r.conf, r.x, r.y, r.z)
    return ",".join([str(int(r.frame)), str(int(r.id))] + [_num(v) for v in vals])


def write_mot_file(records, path: PathLike) -> None:
    with open(path, "w") as fh:
        for r in _flatten(records):
            fh.write(format_mot_record(r) + "\n")


def frames_from_records(by_frame: Mapping[int, list[MotRecord]], n_frames: Optional[int] = None) -> list[list[MotRecord]]:
    """Dense 0-based frame list; frame ``f`` of the file lands at index ``f - 1``."""
    last = max(by_frame, default=0)
    n = last if n_frames is None else n_frames
    if last > n:
        raise ValueError(f"records reach frame {last} but the sequence has {n} frames")
    return [list(by_frame.get(f, [])) for f in range(1, n + 1)]


def detections_to_records(frames: Iterable[Iterable[Detection]]) -> list[MotRecord]:
    out = []
    for f, dets in enumerate(frames, start=1):
        out += [MotRecord(f, -1, d.box.x, d.box.y, d.box.w, d.box.h, d.score) for d in dets]
    return out


def records_to_detections(frames: Iterable[Iterable[MotRecord]]) -> list[list[Detection]]:
    out = []
    for recs in frames:
        out.append([Detection(r.box, float(min(max(r.conf, 0.0), 1.0))) for r in recs])
    return out


# embeddings -----------------------------------------------------------------

EMBED_HEADER = "frame,index,dim="


def write_embeddings(embeddings: Mapping[int, Mapping[int, np.ndarray]], path: PathLike) -> None:
    """Write ``{frame: {detection_index: vector}}`` as text with a dimension header."""
    dims = {len(np.ravel(v)) for per in embeddings.values() for v in per.values()}
    if len(dims) > 1:
        raise ValueError(f"embeddings have mixed dimensions {sorted(dims)}")
    dim = dims.pop() if dims else 0
    with open(path, "w") as fh:
        fh.write(f"{EMBED_HEADER}{dim}\n")
        for frame in sorted(embeddings):
            for idx in sorted(embeddings[frame]):
                vec = np.ravel(embeddings[frame][idx])
                fh.write(",".join([str(frame), str(idx)] + [format(float(v), ".9g") for v in vec]) + "\n")


def read_embeddings(path: PathLike) -> dict[int, dict[int, np.ndarray]]:
    out: dict[int, dict[int, np.ndarray]] = defaultdict(dict)
    with open(path) as fh:
        header = fh.readline().strip()
        if not header.startswith(EMBED_HEADER):
            raise FormatError(f"{path}:1: expected header '{EMBED_HEADER}<D>', got {header!r}")
        try:
            dim = int(header[len(EMBED_HEADER):])
        except ValueError:
            raise FormatError(f"{path}:1: bad dimension in header {header!r}") from None
        for lineno, raw in enumerate(fh, start=2):
            line = raw.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != dim + 2:
                raise FormatError(f"{path}:{lineno}: expected {dim} values after frame,index, got {len(parts) - 2}")
            try:
                frame, idx = int(parts[0]), int(parts[1])
                vec = np.array([float(p) for p in parts[2:]])
            except ValueError:
                raise FormatError(f"{path}:{lineno}: non-numeric field in {line!r}") from None
            if idx in out[frame]:
                raise FormatError(f"{path}:{lineno}: duplicate embedding for frame {frame} index {idx}")
            out[frame][idx] = vec
    return dict(sorted(out.items()))


# config -----------------------------------------------------------------------


@dataclass
class AgreementConfig:
    pair_threshold: float = 0.4
    nms_threshold: float = 0.5


@dataclass
class EngineConfig:
    tracker: TrackerConfig = field(default_factory=TrackerConfig)
    transport: SinkhornConfig = field(default_factory=SinkhornConfig)
    agreement: AgreementConfig = field(default_factory=AgreementConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    views: ViewConfig = field(default_factory=ViewConfig)

    def __post_init__(self):
        self.tracker.sinkhorn = self.transport


_SECTIONS = {
    "tracker": TrackerConfig,
    "transport": SinkhornConfig,
    "agreement": AgreementConfig,
    "synth": SynthConfig,
    "views": ViewConfig,
}


def _check_value(section: str, key: str, value, default):
    where = f"{section}.{key}"
    if isinstance(default, Association):
        try:
            return Association.parse(value)
        except ValueError:
            raise ValueError(f"config key {where}: unknown association {value!r}") from None
    if isinstance(default, bool) or (default is None and key == "log_domain"):
        if value is None and default is None:
            return None
        if not isinstance(value, bool):
            raise ValueError(f"config key {where}: expected a boolean, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ValueError(f"config key {where}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ValueError(f"config key {where}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ValueError(f"config key {where}: expected a string, got {value!r}")
        return value
    raise ValueError(f"config key {where} cannot be set from a file")


def config_from_dict(doc: Optional[Mapping]) -> EngineConfig:
    """Build an engine config; unknown sections/keys and type mismatches raise ``ValueError``."""
    doc = doc or {}
    if not isinstance(doc, Mapping):
        raise ValueError("config document must be a mapping of sections")
    built = {}
    for section, body in doc.items():
        if section not in _SECTIONS:
            raise ValueError(f"unknown config key {section!r}")
        if body is None:
            continue
        if not isinstance(body, Mapping):
            raise ValueError(f"config section {section!r} must be a mapping")
        cls = _SECTIONS[section]
        defaults = {f.name: getattr(cls(), f.name) for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, value in body.items():
            if key not in defaults or key == "sinkhorn":
                raise ValueError(f"unknown config key {section}.{key}")
            kwargs[key] = _check_value(section, key, value, defaults[key])
        try:
            built[section] = cls(**kwargs)
        except ValueError as exc:
            raise ValueError(f"config section {section!r}: {exc}") from None
    return EngineConfig(**built)


def read_config(path: PathLike) -> EngineConfig:
    with open(path) as fh:
        try:
            doc = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise FormatError(f"{path}: not a valid YAML document: {exc}") from None
    return config_from_dict(doc)


# metric reports -----------------------------------------------------------------

REPORT_FIELDS = [
    ("MOTA", "mota", float),
    ("IDF1", "idf1", float),
    ("MT", "mt", int),
    ("ML", "ml", int),
    ("IDs", "id_switches", int),
    ("FP", "fp", int),
    ("FN", "fn", int),
    ("GT", "gt_count", int),
    ("mAP", "map_proxy", float),
    ("IDTP", "idtp", int),
    ("IDFP", "idfp", int),
    ("IDFN", "idfn", int),
    ("GT_TRACKS", "n_gt_tracks", int),
]


def format_report(result: SequenceEvalResult) -> str:
    lines = []
    for key, attr, kind in REPORT_FIELDS:
        v = getattr(result, attr)
        lines.append(f"{key}: {v:.6f}" if kind is float else f"{key}: {int(v)}")
    return "\n".join(lines) + "\n"


def write_report(result: SequenceEvalResult, path: PathLike) -> None:
    Path(path).write_text(format_report(result))


def parse_report(text: str) -> SequenceEvalResult:
    known = {key: (attr, kind) for key, attr, kind in REPORT_FIELDS}
    vals = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        key, sep, value = line.partition(":")
        if not sep or key.strip() not in known:
            raise FormatError(f"report line {lineno}: unrecognized entry {line!r}")
        attr, kind = known[key.strip()]
        vals[attr] = kind(value.strip())
    missing = [k for k, a, _ in REPORT_FIELDS if a not in vals]
    if missing:
        raise FormatError(f"report is missing {', '.join(missing)}")
    return SequenceEvalResult(**vals)

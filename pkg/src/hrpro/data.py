"""Domain types, corpus file formats and validation.

Times are snippet units everywhere inside the package; seconds only appear at
the CLI boundary via ``snippet_duration_sec``.

On-disk corpus layout::

    <dir>/annotations.json
    <dir>/features/<video_id>.bin    little-endian float32, row-major T x D
    <dir>/features/<video_id>.json   {"T": int, "D": int, "snippet_duration_sec": float}
"""

import dataclasses
import enum
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ConfigError, LoadError, SchemaError, ValidationError

ANNOTATION_FILE = "annotations.json"
FEATURE_DIR = "features"


@dataclass(frozen=True)
class PointAnnotation:
    t: int
    label: int


@dataclass(frozen=True)
class GtInstance:
    start: float
    end: float
    label: int


class Tag(str, enum.Enum):
    CANDIDATE = "candidate"
    RP = "RP"
    PP = "PP"
    NP = "NP"


@dataclass(frozen=True)
class Proposal:
    start: float
    end: float
    label: int
    score_oic: float
    score_comp: Optional[float] = None
    tag: Tag = Tag.CANDIDATE

    @property
    def length(self):
        return self.end - self.start

    @property
    def confidence(self):
        return self.score_oic + (self.score_comp or 0.0)

    def with_tag(self, tag):
        return dataclasses.replace(self, tag=tag)

    def to_json(self, video_id):
        return {"video_id": video_id, "start": float(self.start), "end": float(self.end),
                "label": int(self.label), "score_oic": float(self.score_oic), "tag": self.tag.value}


@dataclass(frozen=True)
class Detection:
    start: float
    end: float
    label: int
    confidence: float


@dataclass(frozen=True, eq=False)
class VideoRecord:
    video_id: str
    features: np.ndarray
    snippet_duration_sec: float
    points: tuple = ()
    gt_instances: Optional[tuple] = None

    def __post_init__(self):
        feats = np.ascontiguousarray(self.features, dtype=np.float32)
        feats.setflags(write=False)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "points", tuple(self.points))
        if self.gt_instances is not None:
            object.__setattr__(self, "gt_instances", tuple(self.gt_instances))

    @property
    def T(self):
        return self.features.shape[0]

    @property
    def D(self):
        return self.features.shape[1] if self.features.ndim == 2 else 0

    def without_gt(self):
        """Copy with ground truth stripped; training code only ever sees these."""
        return dataclasses.replace(self, gt_instances=None)


def validate_record(r, num_classes=None):
    """Return every invariant violation of ``r`` as a message; empty when valid."""
    problems = []
    if r.features.ndim != 2:
        problems.append(f"{r.video_id}: features must be 2-D, got ndim={r.features.ndim}")
        return problems
    T, D = r.features.shape
    if T < 1:
        problems.append(f"{r.video_id}: T must be >= 1")
    if D < 1:
        problems.append(f"{r.video_id}: D must be >= 1")
    if not np.all(np.isfinite(r.features)):
        problems.append(f"{r.video_id}: non-finite feature values")
    if not (r.snippet_duration_sec > 0 and math.isfinite(r.snippet_duration_sec)):
        problems.append(f"{r.video_id}: snippet_duration_sec must be positive")
    for p in r.points:
        if not 0 <= p.t < T:
            problems.append(f"{r.video_id}: point t={p.t} outside [0, {T})")
        if num_classes is not None and not 0 <= p.label < num_classes:
            problems.append(f"{r.video_id}: point label {p.label} outside [0, {num_classes})")
    ts = [p.t for p in r.points]
    if any(b <= a for a, b in zip(ts, ts[1:])):
        problems.append(f"{r.video_id}: points not strictly increasing in time")
    for g in r.gt_instances or ():
        if not 0 <= g.start < g.end <= T:
            problems.append(f"{r.video_id}: gt instance [{g.start}, {g.end}) invalid for T={T}")
        if num_classes is not None and not 0 <= g.label < num_classes:
            problems.append(f"{r.video_id}: gt label {g.label} outside [0, {num_classes})")
    return problems


@dataclass
class Corpus:
    records: list
    num_classes: int
    class_names: list = field(default_factory=list)

    def __iter__(self):
        return iter(self.records)

    def __len__(self):
        return len(self.records)

    @property
    def D(self):
        return self.records[0].D if self.records else 0


def _num_workers():
    raw = os.environ.get("HRPRO_NUM_WORKERS")
    if raw:
        return max(1, int(raw))
    return min(4, os.cpu_count() or 1)


def _read_features(feature_dir, video_id):
    bin_path = feature_dir / f"{video_id}.bin"
    hdr_path = feature_dir / f"{video_id}.json"
    if not bin_path.exists() or not hdr_path.exists():
        raise LoadError(f"missing feature file for video {video_id}: {bin_path}")
    header = json.loads(hdr_path.read_text())
    T, D = int(header["T"]), int(header["D"])
    raw = np.fromfile(bin_path, dtype="<f4")
    if raw.size != T * D:
        raise SchemaError(f"{video_id}: feature file holds {raw.size} floats, header says {T}x{D}")
    return raw.reshape(T, D), float(header["snippet_duration_sec"])


def read_annotations(annotation_file):
    path = Path(annotation_file)
    try:
        ann = json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise LoadError(f"annotation file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise SchemaError(f"annotation file is not valid JSON: {exc}") from exc
    for key in ("num_classes", "videos"):
        if key not in ann:
            raise SchemaError(f"annotation file lacks '{key}'")
    return ann


def load_corpus(feature_dir, annotation_file):
    """Load and validate every video listed in ``annotation_file``."""
    return open_corpus(feature_dir, annotation_file).records


def open_corpus(feature_dir, annotation_file=None):
    """Like :func:`load_corpus` but keeps the class metadata.

    Called with a single argument, ``feature_dir`` is a corpus directory.
    """
    if annotation_file is None:
        root = Path(feature_dir)
        feature_dir, annotation_file = root / FEATURE_DIR, root / ANNOTATION_FILE
    feature_dir = Path(feature_dir)
    ann = read_annotations(annotation_file)
    C = int(ann["num_classes"])
    videos = ann["videos"]

    with ThreadPoolExecutor(max_workers=_num_workers()) as pool:
        loaded = list(pool.map(lambda v: _read_features(feature_dir, v["video_id"]), videos))

    records = []
    dims = set()
    for v, (feats, dur) in zip(videos, loaded):
        points = sorted((PointAnnotation(int(p["t"]), int(p["label"])) for p in v.get("points", [])),
                        key=lambda p: p.t)
        gt = v.get("gt")
        gt = None if gt is None else [GtInstance(float(g["start"]), float(g["end"]), int(g["label"])) for g in gt]
        rec = VideoRecord(v["video_id"], feats, dur, points, gt)
        dims.add(rec.D)
        problems = validate_record(rec, C)
        if problems:
            raise ValidationError("; ".join(problems))
        records.append(rec)
    if len(dims) > 1:
        raise SchemaError(f"feature dimension differs across videos: {sorted(dims)}")
    return Corpus(records, C, list(ann.get("class_names") or [str(c) for c in range(C)]))


def save_corpus(records, out_dir, num_classes, class_names=None):
    out = Path(out_dir)
    (out / FEATURE_DIR).mkdir(parents=True, exist_ok=True)
    videos = []
    for r in records:
        np.asarray(r.features, dtype="<f4").tofile(out / FEATURE_DIR / f"{r.video_id}.bin")
        header = {"T": r.T, "D": r.D, "snippet_duration_sec": float(r.snippet_duration_sec)}
        (out / FEATURE_DIR / f"{r.video_id}.json").write_text(json.dumps(header))
        entry = {"video_id": r.video_id, "points": [{"t": p.t, "label": p.label} for p in r.points]}
        if r.gt_instances is not None:
            entry["gt"] = [{"start": g.start, "end": g.end, "label": g.label} for g in r.gt_instances]
        videos.append(entry)
    ann = {"num_classes": int(num_classes),
           "class_names": list(class_names or [f"class_{c}" for c in range(num_classes)]),
           "videos": videos}
    (out / ANNOTATION_FILE).write_text(json.dumps(ann, indent=1))
    return out


def resolve_corpus_dir(data_dir, split):
    """Accept either a corpus directory or a parent holding ``train/``/``test/``."""
    root = Path(data_dir)
    if (root / ANNOTATION_FILE).exists():
        return root
    if (root / split / ANNOTATION_FILE).exists():
        return root / split
    raise LoadError(f"no corpus found under {root} (looked for {ANNOTATION_FILE} and {split}/)")


@dataclass
class Config:
    tau: float = 0.1
    mu: float = 0.999
    lambda1: float = 1.0
    lambda2: float = 1.0
    theta1: float = 0.95
    theta2: float = 0.1
    theta_P: list = field(default_factory=lambda: [round(0.05 * i, 2) for i in range(6)])
    theta_A: list = field(default_factory=lambda: [round(0.01 * i, 2) for i in range(11)])
    epsilon: float = 0.25
    oic_inflation: float = 0.25
    video_cls_threshold: float = 0.5
    n_rab: int = 2
    lr: float = 1e-4
    weight_decay: float = 1e-3
    batch_size: int = 16
    focal_gamma: float = 2.0
    nms_sigma: float = 0.4
    nms_min_score: float = 1e-3
    seed: int = 0
    epochs_snippet: int = 30
    epochs_instance: int = 30
    head_hidden: int = 128
    eval_thresholds: list = field(default_factory=lambda: [round(0.1 * i, 1) for i in range(1, 8)])
    # ablation toggles
    enable_rab: bool = True
    enable_contra: bool = True
    enable_instance: bool = True
    enable_score: bool = True
    enable_reg: bool = True
    enable_rp_matching: bool = True
    enable_np: bool = True
    # alternative readings of the losses
    contra_split_logs: bool = False
    base_all_classes: bool = True
    include_point_snippets: bool = True
    joint_finetune: bool = False
    score_include_rp: bool = True
    memory_space: str = "embedded"  # "rab": attention-block output space, "embedded": phi_e output space

    def __post_init__(self):
        problems = []
        if not 0 < self.mu < 1:
            problems.append("mu must lie in (0, 1)")
        if not self.tau > 0:
            problems.append("tau must be > 0")
        if not self.epsilon > 0:
            problems.append("epsilon must be > 0")
        if not self.oic_inflation > 0:
            problems.append("oic_inflation must be > 0")
        for name in ("theta1", "theta2", "video_cls_threshold"):
            if not 0 <= getattr(self, name) <= 1:
                problems.append(f"{name} must lie in [0, 1]")
        for name in ("theta_P", "theta_A"):
            vals = getattr(self, name)
            if any(not 0 <= v <= 1 for v in vals):
                problems.append(f"{name} entries must lie in [0, 1]")
            object.__setattr__(self, name, sorted(float(v) for v in vals))
        if self.memory_space not in ("rab", "embedded"):
            problems.append("memory_space must be 'rab' or 'embedded'")
        if not self.nms_sigma > 0:
            problems.append("nms_sigma must be > 0")
        if self.batch_size < 1 or self.n_rab < 0:
            problems.append("batch_size must be >= 1 and n_rab >= 0")
        if problems:
            raise ConfigError("; ".join(problems))

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        return cls(**d)

    @classmethod
    def from_json(cls, path):
        try:
            d = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(d, dict):
            raise ConfigError("config must be a flat JSON object")
        return cls.from_dict(d)

    def to_dict(self):
        return dataclasses.asdict(self)

    def replace(self, **kw):
        return dataclasses.replace(self, **kw)

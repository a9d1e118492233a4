"""Seeded generator of small corpora with planted action instances.

Background snippets are isotropic Gaussian noise; snippets inside an instance
additionally carry the centroid of the instance's class. Class centroids are
mutually orthogonal with pairwise distance
``class_separation * separation_scale * noise_sigma``.
"""

import dataclasses
import enum
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import GtInstance, PointAnnotation, VideoRecord
from .errors import ConfigError, GenerationError


class PointDistribution(str, enum.Enum):
    UNIFORM = "uniform"
    CENTER = "center"
    GAUSSIAN = "gaussian"


@dataclass(frozen=True)
class GenSpec:
    n_videos: int = 60
    n_classes: int = 3
    T_range: tuple = (80, 160)
    D: int = 32
    instances_per_video: tuple = (2, 4)
    min_gap: int = 4
    class_separation: float = 0.8
    noise_sigma: float = 1.0
    point_distribution: PointDistribution = PointDistribution.GAUSSIAN
    seed: int = 0
    instance_len_range: tuple = (10, 30)
    separation_scale: float = 16.0
    gaussian_sigma_frac: float = 1.0 / 6.0
    max_classes_per_video: int = 0  # 0 means unrestricted
    snippet_duration_sec: float = 16 / 25
    n_test_videos: int = 0  # how many of the n_videos gen-data writes to test/

    def __post_init__(self):
        object.__setattr__(self, "point_distribution", PointDistribution(self.point_distribution))
        for name in ("T_range", "instances_per_video", "instance_len_range"):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))
        problems = []
        if self.min_gap < 1:
            problems.append("min_gap must be >= 1")
        if self.instance_len_range[0] < 2:
            problems.append("instances must be at least 2 snippets long")
        if not 0 < self.class_separation <= 1:
            problems.append("class_separation must lie in (0, 1]")
        if not self.noise_sigma > 0:
            problems.append("noise_sigma must be > 0")
        for name in ("T_range", "instances_per_video", "instance_len_range"):
            lo, hi = getattr(self, name)
            if lo > hi or lo < 0:
                problems.append(f"{name} must be an ordered (min, max) pair")
        if self.n_classes < 1 or self.D < 1 or self.n_videos < 1:
            problems.append("n_classes, D and n_videos must be >= 1")
        if not 0 <= self.n_test_videos < self.n_videos:
            problems.append("n_test_videos must lie in [0, n_videos)")
        if problems:
            raise ConfigError("; ".join(problems))

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown gen-spec keys: {unknown}")
        return cls(**d)

    @classmethod
    def from_json(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["point_distribution"] = self.point_distribution.value
        return d


def sample_point(instance, dist, rng, sigma_frac=1.0 / 6.0):
    """Draw the annotated snippet index for one instance."""
    dist = PointDistribution(dist)
    lo = int(math.ceil(instance.start))
    hi = int(math.ceil(instance.end))
    if hi - lo <= 1:
        return lo
    if dist is PointDistribution.UNIFORM:
        return int(rng.integers(lo, hi))
    mid = 0.5 * (instance.start + instance.end)
    if dist is PointDistribution.CENTER:
        return min(max(int(math.floor(mid)), lo), hi - 1)
    sd = (instance.end - instance.start) * sigma_frac
    x = rng.normal(mid, sd)
    for _ in range(16):
        if instance.start <= x < instance.end:
            break
        x = rng.normal(mid, sd)
    return min(max(int(math.floor(x)), lo), hi - 1)


def class_centroids(spec, rng):
    C, D = spec.n_classes, spec.D
    basis = rng.standard_normal((D, max(C, 1)))
    if C <= D:
        basis, _ = np.linalg.qr(basis)
    else:
        basis /= np.linalg.norm(basis, axis=0, keepdims=True)
    radius = spec.class_separation * spec.separation_scale * spec.noise_sigma / math.sqrt(2.0)
    return radius * basis[:, :C].T


def _place_instances(T, lengths, gap, rng):
    slack = T - sum(lengths) - gap * (len(lengths) - 1)
    if slack < 0:
        return None
    # uniform composition of the slack into len+1 bins
    cuts = np.sort(rng.integers(0, slack + 1, size=len(lengths)))
    spans, cursor, prev = [], 0, 0
    for i, (L, c) in enumerate(zip(lengths, cuts)):
        cursor += int(c) - prev + (gap if i else 0)
        prev = int(c)
        spans.append((cursor, cursor + L))
        cursor += L
    return spans


def _generate_video(spec, centroids, index, seq):
    rng = np.random.default_rng(seq)
    T = int(rng.integers(spec.T_range[0], spec.T_range[1] + 1))
    n = int(rng.integers(spec.instances_per_video[0], spec.instances_per_video[1] + 1))
    spans = None
    for _ in range(100):
        lengths = [int(v) for v in rng.integers(spec.instance_len_range[0], spec.instance_len_range[1] + 1, size=n)]
        spans = _place_instances(T, lengths, spec.min_gap, rng)
        if spans is not None:
            break
    if spans is None:
        raise GenerationError(f"cannot pack {n} instances into T={T} with min_gap={spec.min_gap} (video {index})")

    classes = np.arange(spec.n_classes)
    if spec.max_classes_per_video:
        classes = rng.choice(classes, size=min(spec.max_classes_per_video, spec.n_classes), replace=False)
    labels = [int(v) for v in rng.choice(classes, size=n)]

    feats = rng.normal(0.0, spec.noise_sigma, size=(T, spec.D))
    gts, points = [], []
    for (s, e), c in zip(spans, labels):
        feats[s:e] += centroids[c]
        g = GtInstance(float(s), float(e), c)
        gts.append(g)
        points.append(PointAnnotation(sample_point(g, spec.point_distribution, rng, spec.gaussian_sigma_frac), c))
    return VideoRecord(f"video_{index:04d}", feats.astype(np.float32), spec.snippet_duration_sec, points, gts)


def generate_corpus(spec):
    """Deterministic list of :class:`VideoRecord` for ``spec``."""
    lo_need = spec.instances_per_video[0] * spec.instance_len_range[0] + spec.min_gap * max(spec.instances_per_video[0] - 1, 0)
    if lo_need > spec.T_range[1]:
        raise GenerationError(
            f"infeasible packing: {spec.instances_per_video[0]} instances need {lo_need} snippets, T <= {spec.T_range[1]}")
    root = np.random.SeedSequence(spec.seed)
    centroid_seq, *video_seqs = root.spawn(spec.n_videos + 1)
    centroids = class_centroids(spec, np.random.default_rng(centroid_seq))
    return [_generate_video(spec, centroids, i, s) for i, s in enumerate(video_seqs)]


def split_corpus(records, n_test):
    """Last ``n_test`` videos form the test split."""
    if n_test <= 0:
        return list(records), []
    return list(records[:-n_test]), list(records[-n_test:])

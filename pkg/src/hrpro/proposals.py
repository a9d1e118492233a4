"""Point-anchored proposal generation: threshold grouping, OIC reliability
scores and the RP / PP / NP ranking."""

import json
import logging
import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .data import Proposal, Tag

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RankedProposals:
    rp: tuple = ()
    pp: tuple = ()
    np: tuple = ()

    @property
    def n_p(self):
        return len(self.pp)

    @property
    def n_n(self):
        return len(self.np)


def video_level_classes(P, threshold=0.5):
    """Classes whose top-k mean activation reaches ``threshold`` (k = T//8, at least 1)."""
    P = np.asarray(P, dtype=np.float64)
    T = P.shape[0]
    k = max(1, T // 8)
    top = -np.sort(-P, axis=0)[:k]
    scores = top.mean(axis=0)
    chosen = [int(c) for c in np.nonzero(scores >= threshold)[0]]
    return chosen if chosen else [int(np.argmax(scores))]


def _runs(seq, thresholds, below=False):
    seq = np.ascontiguousarray(seq, dtype=np.float64)
    th = np.ascontiguousarray(sorted(thresholds), dtype=np.float64)
    if seq.size == 0 or th.size == 0:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    return kernels.threshold_runs(seq, th, below)


def generate_candidates(P_c, thresholds, label=0, inflation=0.25):
    """Maximal runs with ``P_c > theta`` for every theta, deduplicated, OIC-scored."""
    starts, ends = _runs(P_c, thresholds)
    if not starts.size:
        return []
    scores = oic_scores(P_c, starts, ends, inflation)
    return [Proposal(float(s), float(e), int(label), float(o))
            for s, e, o in zip(starts.tolist(), ends.tolist(), scores.tolist())]


def oic_scores(seq, starts, ends, inflation=0.25):
    seq = np.ascontiguousarray(seq, dtype=np.float64)
    return kernels.oic_scores(seq, np.ascontiguousarray(starts, dtype=np.int64),
                              np.ascontiguousarray(ends, dtype=np.int64), float(inflation))


def oic_score(seq, start, end, inflation=0.25):
    """Inner mean minus the mean of the two inflated flanks.

    Each flank is ``ceil(L * inflation)`` snippets (at least one), clipped to
    the video; the flanks are pooled. Fractional bounds are widened to whole
    snippets.
    """
    if not end > start:
        raise ValueError(f"degenerate span [{start}, {end})")
    s, e = int(math.floor(start)), int(math.ceil(end))
    if s < 0 or e > len(seq):
        raise ValueError(f"span [{start}, {end}) outside sequence of length {len(seq)}")
    return float(oic_scores(seq, [s], [e], inflation)[0])


def _rp_key(p):
    # highest OIC, then longer span, then earlier start
    return (-p.score_oic, -(p.end - p.start), p.start)


def rank_proposals(candidates, points, A, theta_A, inflation=0.25):
    """Split candidates into reliable / positive proposals and mine negatives.

    Reliable: per point, the best-OIC candidate of the point's class whose span
    contains it. Positive: every other candidate. Negative: class-agnostic runs
    of low attention (label -1).
    """
    by_class = {}
    for cand in candidates:
        by_class.setdefault(cand.label, []).append(cand)
    chosen = {}
    for pt in points:
        pool = [p for p in by_class.get(pt.label, []) if p.start <= pt.t < p.end]
        if not pool:
            log.warning("point t=%d (class %d) is covered by no candidate", pt.t, pt.label)
            continue
        best = min(pool, key=_rp_key)
        chosen[(best.start, best.end, best.label)] = best
    rp = tuple(p.with_tag(Tag.RP) for p in chosen.values())
    pp = tuple(p.with_tag(Tag.PP) for p in candidates if (p.start, p.end, p.label) not in chosen)

    starts, ends = _runs(A, theta_A, below=True)
    nps = ()
    if starts.size:
        scores = oic_scores(A, starts, ends, inflation)
        nps = tuple(Proposal(float(s), float(e), -1, float(o), tag=Tag.NP)
                    for s, e, o in zip(starts.tolist(), ends.tolist(), scores.tolist()))
    return RankedProposals(rp, pp, nps)


def candidates_for_classes(P, classes, thresholds, inflation=0.25):
    out = []
    for c in classes:
        out.extend(generate_candidates(P[:, c], thresholds, c, inflation))
    return out


def write_proposals_jsonl(path, per_video):
    """``per_video`` maps video_id to a RankedProposals or list of Proposal."""
    with open(path, "w") as fh:
        for vid, props in per_video.items():
            items = props.rp + props.pp + props.np if isinstance(props, RankedProposals) else props
            for p in items:
                fh.write(json.dumps(p.to_json(vid)) + "\n")


def read_proposals_jsonl(path):
    per_video = {}
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            d = json.loads(line)
            per_video.setdefault(d["video_id"], []).append(
                Proposal(d["start"], d["end"], d["label"], d["score_oic"], tag=Tag(d["tag"])))
    return per_video

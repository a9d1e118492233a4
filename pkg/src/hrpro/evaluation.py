"""Temporal IoU, class-wise soft-NMS and mAP@tIoU evaluation."""

import json
import logging
from collections import defaultdict

import numpy as np

from . import kernels
from .data import Detection
from .errors import LoadError

log = logging.getLogger(__name__)

REPORT_RANGES = {"AVG(0.1:0.5)": (0.1, 0.5), "AVG(0.3:0.7)": (0.3, 0.7), "AVG(0.1:0.7)": (0.1, 0.7)}


def _span(x):
    if hasattr(x, "start"):
        return float(x.start), float(x.end)
    return float(x[0]), float(x[1])


def temporal_iou(a, b):
    """IoU of two half-open spans (objects with start/end, or pairs)."""
    a0, a1 = _span(a)
    b0, b1 = _span(b)
    if not (a1 > a0 and b1 > b0):
        raise ValueError(f"degenerate span in temporal_iou: {(a0, a1)}, {(b0, b1)}")
    inter = min(a1, b1) - max(a0, b0)
    if inter <= 0:
        return 0.0
    return inter / ((a1 - a0) + (b1 - b0) - inter)


def iou_matrix(a_spans, b_spans):
    a = np.asarray(a_spans, dtype=np.float64).reshape(-1, 2)
    b = np.asarray(b_spans, dtype=np.float64).reshape(-1, 2)
    return kernels.iou_matrix(np.ascontiguousarray(a[:, 0]), np.ascontiguousarray(a[:, 1]),
                              np.ascontiguousarray(b[:, 0]), np.ascontiguousarray(b[:, 1]))


def soft_nms(dets, sigma=0.4, min_score=1e-3):
    """Gaussian soft-NMS over one class's detections, in pop order.

    The highest-confidence detection (earlier start on ties) is kept, every
    remaining one is rescaled by ``exp(-iou**2 / sigma)``; anything that falls
    below ``min_score`` is dropped.
    """
    if not dets:
        return []
    s = np.array([d.start for d in dets], dtype=np.float64)
    e = np.array([d.end for d in dets], dtype=np.float64)
    c = np.array([d.confidence for d in dets], dtype=np.float64)
    keep, scores = kernels.soft_nms(s, e, c, float(sigma), float(min_score))
    return [Detection(dets[i].start, dets[i].end, dets[i].label, float(sc))
            for i, sc in zip(keep.tolist(), scores.tolist())]


def classwise_soft_nms(dets, sigma=0.4, min_score=1e-3):
    by_class = defaultdict(list)
    for d in dets:
        by_class[d.label].append(d)
    out = []
    for c in sorted(by_class):
        out.extend(soft_nms(by_class[c], sigma, min_score))
    return out


def average_precision(tp, n_gt):
    """All-points interpolated AP from TP flags in rank order."""
    if n_gt == 0:
        return float("nan")
    tp = np.asarray(tp, dtype=np.float64)
    if tp.size == 0:
        return 0.0
    ctp = np.cumsum(tp)
    recall = ctp / n_gt
    precision = ctp / np.arange(1, tp.size + 1)
    mrec = np.concatenate(([0.0], recall))
    mpre = np.concatenate(([0.0], precision))
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    return float(np.sum((mrec[1:] - mrec[:-1]) * mpre[1:]))


def _class_ap(dets_by_video, gts_by_video, label, threshold):
    rows = []
    for vid, dets in dets_by_video.items():
        for d in dets:
            if d.label == label:
                rows.append((-d.confidence, d.start, vid, d))
    rows.sort(key=lambda r: (r[0], r[1], r[2]))
    gts = {vid: [g for g in gs if g.label == label] for vid, gs in gts_by_video.items()}
    n_gt = sum(len(g) for g in gts.values())
    if n_gt == 0:
        return float("nan")
    tp = np.zeros(len(rows), dtype=bool)
    # matching is independent per video; keep global rank positions
    per_video = defaultdict(list)
    for rank, (_, _, vid, _) in enumerate(rows):
        per_video[vid].append(rank)
    for vid, ranks in per_video.items():
        g = gts.get(vid, [])
        if not g:
            continue
        iou = iou_matrix([(rows[r][3].start, rows[r][3].end) for r in ranks], [(x.start, x.end) for x in g])
        tp[ranks] = kernels.greedy_match(np.ascontiguousarray(iou), float(threshold))
    return average_precision(tp, n_gt)


def evaluate_map(dets_by_video, gts_by_video, thresholds, num_classes=None):
    """AP per (class, threshold) and the mAP summary rows.

    AP is averaged over classes that have ground truth at each threshold,
    then over thresholds for the AVG rows.
    """
    thresholds = [float(t) for t in thresholds]
    if num_classes is None:
        labels = {g.label for gs in gts_by_video.values() for g in gs}
        labels |= {d.label for ds in dets_by_video.values() for d in ds}
        num_classes = max(labels) + 1 if labels else 0
    ap = np.full((num_classes, len(thresholds)), np.nan)
    for c in range(num_classes):
        for j, th in enumerate(thresholds):
            ap[c, j] = _class_ap(dets_by_video, gts_by_video, c, th)
    excluded = [c for c in range(num_classes) if np.all(np.isnan(ap[c]))]
    if excluded:
        log.info("classes without ground truth excluded from the mean: %s", excluded)
    valid = ~np.all(np.isnan(ap), axis=1)
    m = np.nanmean(ap[valid], axis=0) if valid.any() else np.zeros(len(thresholds))
    report = {
        "thresholds": thresholds,
        "mAP": {f"{t:.2f}": float(v) for t, v in zip(thresholds, m)},
        "ap_per_class": {str(c): [None if np.isnan(v) else float(v) for v in ap[c]] for c in range(num_classes)},
        "excluded_classes": excluded,
        "meta": {"averaging": "classes per threshold, then thresholds", "interpolation": "all-points",
                 "match": "greedy, tIoU >= threshold"},
    }
    for name, (lo, hi) in REPORT_RANGES.items():
        sel = [v for t, v in zip(thresholds, m) if lo - 1e-9 <= t <= hi + 1e-9]
        if sel:
            report[name] = float(np.mean(sel))
    report["average_mAP"] = float(np.mean(m)) if len(m) else 0.0
    return report


def parse_thresholds(text):
    """``"0.1:0.7:0.1"`` (inclusive range) or ``"0.3,0.5"``."""
    if ":" in text:
        lo, hi, step = (float(x) for x in text.split(":"))
        n = int(round((hi - lo) / step)) + 1
        return [round(lo + i * step, 10) for i in range(n)]
    return [float(x) for x in text.split(",") if x.strip()]


def write_detections_jsonl(path, dets_by_video, durations):
    """Write detections with times converted to seconds."""
    with open(path, "w") as fh:
        for vid, dets in dets_by_video.items():
            k = durations[vid]
            for d in dets:
                fh.write(json.dumps({"video_id": vid, "start": d.start * k, "end": d.end * k,
                                     "label": int(d.label), "confidence": float(d.confidence)}) + "\n")


def read_detections_jsonl(path, durations):
    """Read seconds-based detections back into snippet units."""
    out = defaultdict(list)
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            d = json.loads(line)
            if d["video_id"] not in durations:
                raise LoadError(f"detections reference unknown video {d['video_id']}")
            k = durations[d["video_id"]]
            out[d["video_id"]].append(Detection(d["start"] / k, d["end"] / k, int(d["label"]), float(d["confidence"])))
    return dict(out)

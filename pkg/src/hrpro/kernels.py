"""Hot numeric kernels, each in a numba and a pure-numpy flavour.

The public names at the bottom of the module resolve to one flavour according
to :mod:`hrpro._accel`. Both flavours stay importable (``*_nb`` / ``*_np``) so
they can be cross-checked and benchmarked against each other.

All spans are half-open ``[start, end)`` in snippet units.
"""

import math

import numpy as np

from ._accel import USE_NUMBA, njit


# ---------------------------------------------------------------------------
# threshold grouping
# ---------------------------------------------------------------------------

@njit
def threshold_runs_nb(seq, thresholds, below):
    T = seq.shape[0]
    keys = np.empty(thresholds.shape[0] * (T // 2 + 1), dtype=np.int64)
    n = 0
    for k in range(thresholds.shape[0]):
        th = thresholds[k]
        start = -1
        for t in range(T + 1):
            if t < T:
                hit = seq[t] < th if below else seq[t] > th
            else:
                hit = False
            if hit and start < 0:
                start = t
            elif not hit and start >= 0:
                keys[n] = start * (T + 1) + t
                n += 1
                start = -1
    uniq = np.unique(keys[:n])
    return uniq // (T + 1), uniq % (T + 1)


def threshold_runs_np(seq, thresholds, below):
    seq = np.asarray(seq, dtype=np.float64)
    th = np.asarray(thresholds, dtype=np.float64)
    T = seq.shape[0]
    mask = seq[None, :] < th[:, None] if below else seq[None, :] > th[:, None]
    padded = np.zeros((th.shape[0], T + 2), dtype=np.int8)
    padded[:, 1:-1] = mask
    edges = np.diff(padded, axis=1)
    # row-major nonzero keeps starts and ends paired within each threshold row
    starts = np.nonzero(edges == 1)[1]
    ends = np.nonzero(edges == -1)[1]
    uniq = np.unique(starts.astype(np.int64) * (T + 1) + ends)
    return uniq // (T + 1), uniq % (T + 1)


# ---------------------------------------------------------------------------
# outer-inner contrast
# ---------------------------------------------------------------------------

@njit
def oic_scores_nb(seq, starts, ends, inflation):
    T = seq.shape[0]
    out = np.empty(starts.shape[0], dtype=np.float64)
    for i in range(starts.shape[0]):
        s = starts[i]
        e = ends[i]
        L = e - s
        pad = max(1, int(math.ceil(L * inflation)))
        inner = 0.0
        for t in range(s, e):
            inner += seq[t]
        inner /= L
        outer = 0.0
        cnt = 0
        for t in range(max(0, s - pad), s):
            outer += seq[t]
            cnt += 1
        for t in range(e, min(T, e + pad)):
            outer += seq[t]
            cnt += 1
        if cnt > 0:
            outer /= cnt
        out[i] = inner - outer
    return out


def oic_scores_np(seq, starts, ends, inflation):
    seq = np.asarray(seq, dtype=np.float64)
    s = np.asarray(starts, dtype=np.int64)
    e = np.asarray(ends, dtype=np.int64)
    T = seq.shape[0]
    csum = np.concatenate(([0.0], np.cumsum(seq)))
    L = e - s
    pad = np.maximum(1, np.ceil(L * inflation).astype(np.int64))
    inner = (csum[e] - csum[s]) / L
    ls = np.maximum(0, s - pad)
    re = np.minimum(T, e + pad)
    cnt = (s - ls) + (re - e)
    total = (csum[s] - csum[ls]) + (csum[re] - csum[e])
    outer = np.where(cnt > 0, total / np.maximum(cnt, 1), 0.0)
    return inner - outer


# ---------------------------------------------------------------------------
# pseudo snippet mining
# ---------------------------------------------------------------------------

@njit
def pseudo_snippets_nb(A, points, theta1, theta2):
    """Return (action_t, action_owner, background_mask).

    ``action_owner[j]`` is the index into ``points`` that claimed snippet
    ``action_t[j]``.
    """
    T = A.shape[0]
    N = points.shape[0]
    act_t = np.empty(2 * T + 2 * N, dtype=np.int64)
    act_o = np.empty(2 * T + 2 * N, dtype=np.int64)
    n = 0
    bkg = np.zeros(T, dtype=np.bool_)
    for i in range(N):
        p = points[i]
        lo = points[i - 1] + 1 if i > 0 else 0
        lo_slice = points[i - 1] if i > 0 else 0
        hi = points[i + 1] if i < N - 1 else T

        # backward scan: argmin over A[prev:p]
        amin_left = -1
        if p > lo_slice:
            amin_left = lo_slice
            for t in range(lo_slice + 1, p):
                if A[t] < A[amin_left]:
                    amin_left = t
        alive = True
        for t in range(p, lo - 1, -1):
            if alive:
                if A[t] > theta1:
                    act_t[n] = t
                    act_o[n] = i
                    n += 1
                else:
                    alive = False
            if A[t] < theta2 or t == amin_left:
                bkg[t] = True

        # forward scan: argmin over A[p:next]
        amin_right = -1
        if hi > p:
            amin_right = p
            for t in range(p + 1, hi):
                if A[t] < A[amin_right]:
                    amin_right = t
        alive = True
        for t in range(p, hi):
            if alive:
                if A[t] > theta1:
                    act_t[n] = t
                    act_o[n] = i
                    n += 1
                else:
                    alive = False
            if A[t] < theta2 or t == amin_right:
                bkg[t] = True
    return act_t[:n], act_o[:n], bkg


def _leading_true(mask):
    # length of the initial all-True prefix
    return int(np.argmin(mask)) if not mask.all() else mask.shape[0]


def pseudo_snippets_np(A, points, theta1, theta2):
    A = np.asarray(A, dtype=np.float64)
    points = np.asarray(points, dtype=np.int64)
    T = A.shape[0]
    N = points.shape[0]
    act_t, act_o = [], []
    bkg = np.zeros(T, dtype=bool)
    for i, p in enumerate(points):
        lo = points[i - 1] + 1 if i > 0 else 0
        lo_slice = points[i - 1] if i > 0 else 0
        hi = points[i + 1] if i < N - 1 else T

        left = A[lo:p + 1][::-1]
        k = _leading_true(left > theta1)
        act_t.append(np.arange(p, p - k, -1))
        bkg[lo:p + 1] |= A[lo:p + 1] < theta2
        if p > lo_slice:
            j = lo_slice + int(np.argmin(A[lo_slice:p]))
            # the previous point itself sits outside this scan
            if j >= lo:
                bkg[j] = True

        right = A[p:hi]
        k = _leading_true(right > theta1)
        act_t.append(np.arange(p, p + k))
        bkg[p:hi] |= right < theta2
        if hi > p:
            bkg[p + int(np.argmin(right))] = True
        act_o.append(np.full(len(act_t[-2]) + len(act_t[-1]), i, dtype=np.int64))
    if act_t:
        t = np.concatenate(act_t).astype(np.int64)
        o = np.concatenate(act_o)
    else:
        t = np.empty(0, dtype=np.int64)
        o = np.empty(0, dtype=np.int64)
    return t, o, bkg


# ---------------------------------------------------------------------------
# interval IoU, soft-NMS, greedy matching
# ---------------------------------------------------------------------------

@njit
def iou_matrix_nb(a_s, a_e, b_s, b_e):
    out = np.zeros((a_s.shape[0], b_s.shape[0]), dtype=np.float64)
    for i in range(a_s.shape[0]):
        for j in range(b_s.shape[0]):
            inter = min(a_e[i], b_e[j]) - max(a_s[i], b_s[j])
            if inter > 0.0:
                union = (a_e[i] - a_s[i]) + (b_e[j] - b_s[j]) - inter
                out[i, j] = inter / union
    return out


def iou_matrix_np(a_s, a_e, b_s, b_e):
    a_s = np.asarray(a_s, dtype=np.float64)[:, None]
    a_e = np.asarray(a_e, dtype=np.float64)[:, None]
    b_s = np.asarray(b_s, dtype=np.float64)[None, :]
    b_e = np.asarray(b_e, dtype=np.float64)[None, :]
    inter = np.minimum(a_e, b_e) - np.maximum(a_s, b_s)
    union = (a_e - a_s) + (b_e - b_s) - inter
    return np.where(inter > 0.0, inter / np.where(inter > 0.0, union, 1.0), 0.0)


@njit
def soft_nms_nb(starts, ends, scores, sigma, min_score):
    """Gaussian soft-NMS. Returns (kept indices in pop order, their scores)."""
    n = starts.shape[0]
    sc = scores.astype(np.float64).copy()
    alive = np.ones(n, dtype=np.bool_)
    keep = np.empty(n, dtype=np.int64)
    kept_sc = np.empty(n, dtype=np.float64)
    k = 0
    for _ in range(n):
        best = -1
        for j in range(n):
            if not alive[j]:
                continue
            if best < 0 or sc[j] > sc[best] or (sc[j] == sc[best] and starts[j] < starts[best]):
                best = j
        if best < 0 or sc[best] < min_score:
            break
        alive[best] = False
        keep[k] = best
        kept_sc[k] = sc[best]
        k += 1
        for j in range(n):
            if not alive[j]:
                continue
            inter = min(ends[j], ends[best]) - max(starts[j], starts[best])
            if inter > 0.0:
                union = (ends[j] - starts[j]) + (ends[best] - starts[best]) - inter
                iou = inter / union
                sc[j] *= math.exp(-(iou * iou) / sigma)
            if sc[j] < min_score:
                alive[j] = False
    return keep[:k], kept_sc[:k]


def soft_nms_np(starts, ends, scores, sigma, min_score):
    s = np.asarray(starts, dtype=np.float64)
    e = np.asarray(ends, dtype=np.float64)
    sc = np.asarray(scores, dtype=np.float64).copy()
    idx = np.arange(s.shape[0])
    keep, kept = [], []
    while idx.size:
        cur = sc[idx]
        top = cur.max()
        if top < min_score:
            break
        cand = np.nonzero(cur == top)[0]
        b = cand[np.argmin(s[idx[cand]])] if cand.size > 1 else cand[0]  # first minimiser on equal starts
        best = idx[b]
        keep.append(best)
        kept.append(sc[best])
        idx = np.delete(idx, b)
        if not idx.size:
            break
        iou = iou_matrix_np(s[idx], e[idx], s[best:best + 1], e[best:best + 1])[:, 0]
        sc[idx] *= np.exp(-(iou * iou) / sigma)
        idx = idx[sc[idx] >= min_score]
    return np.asarray(keep, dtype=np.int64), np.asarray(kept, dtype=np.float64)


@njit
def greedy_match_nb(iou, threshold):
    """Rows are detections in rank order; return the TP flag per row."""
    n_det, n_gt = iou.shape
    used = np.zeros(n_gt, dtype=np.bool_)
    tp = np.zeros(n_det, dtype=np.bool_)
    for i in range(n_det):
        best = -1
        best_iou = threshold
        for j in range(n_gt):
            if used[j]:
                continue
            if iou[i, j] >= best_iou and (best < 0 or iou[i, j] > iou[i, best]):
                best = j
                best_iou = iou[i, j]
        if best >= 0:
            used[best] = True
            tp[i] = True
    return tp


def greedy_match_np(iou, threshold):
    iou = np.asarray(iou, dtype=np.float64)
    n_det, n_gt = iou.shape
    avail = np.ones(n_gt, dtype=bool)
    tp = np.zeros(n_det, dtype=bool)
    for i in range(n_det):
        row = np.where(avail, iou[i], -1.0)
        if n_gt == 0:
            break
        j = int(np.argmax(row))
        if row[j] >= threshold:
            avail[j] = False
            tp[i] = True
    return tp


# ---------------------------------------------------------------------------
# momentum memory writes
# ---------------------------------------------------------------------------

@njit
def ema_rows_nb(mem, labels, feats, mu):
    """Sequential in-place ``mem[c] = mu*mem[c] + (1-mu)*x`` for each (c, x)."""
    for i in range(labels.shape[0]):
        c = labels[i]
        for d in range(mem.shape[1]):
            mem[c, d] = mu * mem[c, d] + (1.0 - mu) * feats[i, d]
    return mem


def ema_rows_np(mem, labels, feats, mu):
    labels = np.asarray(labels, dtype=np.int64)
    feats = np.asarray(feats, dtype=np.float64)
    for c in np.unique(labels):
        x = feats[labels == c]
        n = x.shape[0]
        # closed form of n successive writes
        w = (1.0 - mu) * mu ** np.arange(n - 1, -1, -1, dtype=np.float64)
        mem[c] = mu ** n * mem[c] + w @ x
    return mem


if USE_NUMBA:
    threshold_runs = threshold_runs_nb
    oic_scores = oic_scores_nb
    pseudo_snippets = pseudo_snippets_nb
    iou_matrix = iou_matrix_nb
    soft_nms = soft_nms_nb
    greedy_match = greedy_match_nb
    ema_rows = ema_rows_nb
else:
    threshold_runs = threshold_runs_np
    oic_scores = oic_scores_np
    pseudo_snippets = pseudo_snippets_np
    iou_matrix = iou_matrix_np
    soft_nms = soft_nms_np
    greedy_match = greedy_match_np
    ema_rows = ema_rows_np

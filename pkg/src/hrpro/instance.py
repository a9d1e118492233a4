"""Stage-2: proposal features, completeness score head, boundary regression
head and their losses."""

import dataclasses
import json
import logging
import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .data import Proposal, Tag
from .errors import DivergenceError, HRProError
from .evaluation import temporal_iou
from .proposals import candidates_for_classes, rank_proposals, video_level_classes
from .snippet_net import snippet_outputs_np

log = logging.getLogger(__name__)


class NoReliableProposals(HRProError):
    code = "NO_RELIABLE_PROPOSALS"


# ---------------------------------------------------------------------------
# proposal features
# ---------------------------------------------------------------------------

def proposal_regions(start, end, T, epsilon=0.25):
    """Integer (start-flank, center, end-flank) ranges for a span.

    Fractional spans are widened to whole snippets. A flank that falls off
    the video edge is replaced by the first/last center snippet.
    """
    s = max(0, int(math.floor(start)))
    e = min(T, int(math.ceil(end)))
    if e <= s:
        raise ValueError(f"zero-length proposal [{start}, {end})")
    pad = max(1, int(math.ceil(epsilon * (e - s))))
    left = (max(0, s - pad), s) if s > 0 else (s, s + 1)
    right = (e, min(T, e + pad)) if e < T else (e - 1, e)
    return left, (s, e), right


@dataclass
class ProposalFeatures:
    I_s: torch.Tensor
    I_c: torch.Tensor
    I_e: torch.Tensor

    @property
    def pooled(self):
        return tuple(x.max(dim=0).values for x in (self.I_s, self.I_c, self.I_e))


def proposal_features(X, p, epsilon=0.25):
    X = torch.as_tensor(X)
    (ls, le), (cs, ce), (rs, re) = proposal_regions(p.start, p.end, X.shape[0], epsilon)
    return ProposalFeatures(X[ls:le], X[cs:ce], X[rs:re])


def pooled_features(X, spans, epsilon=0.25):
    """Max-pooled (start, center, end) features for many spans; each N x D."""
    X = torch.as_tensor(X)
    T, D = X.shape
    if not spans:
        z = X.new_zeros((0, D))
        return z, z, z
    out = ([], [], [])
    for s, e in spans:
        for k, (a, b) in enumerate(proposal_regions(s, e, T, epsilon)):
            out[k].append(X[a:b].max(dim=0).values)
    return tuple(torch.stack(o) for o in out)


# ---------------------------------------------------------------------------
# heads
# ---------------------------------------------------------------------------

def _conv_block(c_in, hidden, c_out):
    return nn.Sequential(nn.Conv1d(c_in, hidden, 1), nn.ReLU(), nn.Conv1d(hidden, c_out, 1))


class InstanceHeads(nn.Module):
    """Score head (3D -> [0,1]) and regression head (2D -> two offsets).

    Proposals are laid along the conv's temporal axis, one column each.
    """

    def __init__(self, D, hidden=128):
        super().__init__()
        self.D = D
        self.score_head = _conv_block(3 * D, hidden, 1)
        self.reg_head = _conv_block(2 * D, hidden, 2)

    def score(self, f_s, f_c, f_e):
        z = torch.cat([f_c - f_s, f_c, f_c - f_e], dim=1)
        return torch.sigmoid(self.score_head(z.T[None])[0, 0])

    def regress(self, f_s, f_e):
        out = self.reg_head(torch.cat([f_s, f_e], dim=1).T[None])[0]
        return out[0], out[1]


def completeness_forward(f, heads):
    f_s, f_c, f_e = f.pooled
    return heads.score(f_s[None], f_c[None], f_e[None])[0]


# ---------------------------------------------------------------------------
# refinement and matching
# ---------------------------------------------------------------------------

def refine_spans(starts, ends, d_s, d_e, T):
    """Vectorised refinement; returns (starts, ends, rejected)."""
    s = np.asarray(starts, dtype=np.float64)
    e = np.asarray(ends, dtype=np.float64)
    w = e - s
    rs = np.clip(s - np.asarray(d_s) * w, 0.0, T)
    re = np.clip(e - np.asarray(d_e) * w, 0.0, T)
    rejected = rs >= re
    return np.where(rejected, s, rs), np.where(rejected, e, re), rejected


def refine_proposal(p, delta_s, delta_e, T, return_flag=False):
    """Shift boundaries by offsets scaled with the span length, clipped to [0, T].

    A refinement that would invert the span is rejected and ``p`` is returned.
    """
    s, e, rej = refine_spans([p.start], [p.end], [delta_s], [delta_e], T)
    out = dataclasses.replace(p, start=float(s[0]), end=float(e[0]))
    return (out, bool(rej[0])) if return_flag else out


def best_reference(p, refs):
    """(IoU, reference) of the same-class reference overlapping ``p`` most."""
    best, best_iou = None, 0.0
    for r in refs:
        if r.label != p.label:
            continue
        iou = temporal_iou(p, r)
        if iou > best_iou:
            best, best_iou = r, iou
    return best_iou, best


def match_to_rp(p, rps):
    return best_reference(p, rps)[0]


def smooth_l1(x, y, beta=1.0):
    d = (x - y).abs()
    return torch.where(d < beta, 0.5 * d * d / beta, d - 0.5 * beta)


def differentiable_iou(s, e, ref_s, ref_e):
    inter = (torch.minimum(e, ref_e) - torch.maximum(s, ref_s)).clamp_min(0.0)
    union = (e - s).clamp_min(0.0) + (ref_e - ref_s) - inter
    return inter / union


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def score_targets(props, rps, use_rp=True):
    if use_rp:
        return [match_to_rp(p, rps) for p in props]
    return [1.0 if p.tag is Tag.PP else 0.0 for p in props]


def loss_score(pps, nps, rps, X, heads, epsilon=0.25, use_rp=True):
    """Mean SmoothL1 between predicted completeness and IoU with the matched RP.

    ``nps`` must already carry a class label (see :func:`label_negatives`).
    """
    props = list(pps) + list(nps)
    if not props:
        return torch.as_tensor(X).new_zeros(())
    f = pooled_features(X, [(p.start, p.end) for p in props], epsilon)
    pred = heads.score(*f)
    g = torch.tensor(score_targets(props, rps, use_rp), dtype=pred.dtype)
    return smooth_l1(pred, g).mean()


def regression_references(pps, refs):
    """Matched reference span per proposal (None when nothing overlaps)."""
    return [best_reference(p, refs)[1] for p in pps]


def loss_reg(pps, rps, X, heads, epsilon=0.25, refs=None, offsets=None):
    """Mean SmoothL1(IoU(refined, matched RP), 1) over positive proposals.

    The match is fixed on the unrefined span. ``offsets`` overrides the
    regression head output (used for gradient checks).
    """
    X = torch.as_tensor(X)
    if not pps:
        return X.new_zeros(())
    if refs is None:
        refs = regression_references(pps, rps)
    spans = [(p.start, p.end) for p in pps]
    if offsets is None:
        f_s, _, f_e = pooled_features(X, spans, epsilon)
        d_s, d_e = heads.regress(f_s, f_e)
    else:
        d_s, d_e = offsets
    T = X.shape[0]
    s = torch.tensor([sp[0] for sp in spans], dtype=d_s.dtype)
    e = torch.tensor([sp[1] for sp in spans], dtype=d_s.dtype)
    w = e - s
    rs = (s - d_s * w).clamp(0.0, T)
    re = (e - d_e * w).clamp(0.0, T)
    has = torch.tensor([r is not None for r in refs])
    ref_s = torch.tensor([r.start if r is not None else 0.0 for r in refs], dtype=d_s.dtype)
    ref_e = torch.tensor([r.end if r is not None else 1.0 for r in refs], dtype=d_s.dtype)
    iou = torch.where(has, differentiable_iou(rs, re, ref_s, ref_e), torch.zeros_like(rs))
    return smooth_l1(iou, torch.ones_like(iou)).mean()


def label_negatives(nps, classes):
    """One copy of each negative proposal per predicted class."""
    return [dataclasses.replace(p, label=c) for p in nps for c in classes]


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass
class VideoSamples:
    X: torch.Tensor
    rps: list
    pps: list
    nps: list
    reg_refs: list
    score_pos: list  # positive-side samples of the score loss


def mine_video(net, mem, rec, config):
    """Frozen snippet outputs -> ranked proposals for one training video."""
    out = snippet_outputs_np(net, rec, mem)
    predicted = video_level_classes(out.P, config.video_cls_threshold)
    classes = sorted(set(predicted) | {p.label for p in rec.points})
    cands = candidates_for_classes(out.P, classes, config.theta_P, config.oic_inflation)
    ranked = rank_proposals(cands, rec.points, out.A, config.theta_A, config.oic_inflation)
    nps = label_negatives(ranked.np, predicted) if config.enable_np else []
    pps = list(ranked.pp)
    if config.enable_rp_matching:
        refs = regression_references(pps, ranked.rp)
    else:
        # no point anchoring: regress toward the most reliable overlapping candidate
        refs = []
        for p in pps:
            pool = [q for q in cands if q.label == p.label and q is not p and temporal_iou(p, q) > 0]
            refs.append(max(pool, key=lambda q: q.score_oic) if pool else None)
    # reliable proposals are complete by definition; they anchor the top of the score range
    score_pos = pps + [p.with_tag(Tag.PP) for p in ranked.rp] if config.score_include_rp else pps
    X = torch.as_tensor(out.X_e, dtype=torch.float32)
    return VideoSamples(X, list(ranked.rp), pps, nps, refs, score_pos)


def train_instance_stage(corpus, net, mem, config, log_path=None):
    """Fit the score and regression heads on frozen stage-1 outputs."""
    corpus = [r.without_gt() for r in corpus]
    assert all(r.gt_instances is None for r in corpus)
    torch.manual_seed(config.seed + 1)
    rng = np.random.default_rng(config.seed + 1)
    heads = InstanceHeads(net.D, config.head_hidden)
    params = list(heads.parameters())
    if config.joint_finetune:
        params += list(net.parameters())
    else:
        for prm in net.parameters():
            prm.requires_grad_(False)
    opt = torch.optim.Adam(params, lr=config.lr, weight_decay=config.weight_decay)
    history = []
    samples = None
    feats = [torch.tensor(np.array(r.features), dtype=torch.float32) for r in corpus]

    for epoch in range(config.epochs_instance):
        if samples is None or config.joint_finetune:
            net.eval()
            samples = [mine_video(net, mem, r, config) for r in corpus]
            n_rp = sum(len(s.rps) for s in samples)
            if n_rp == 0:
                raise NoReliableProposals("no reliable proposal found on the training corpus; "
                                          "the stage-1 model produces no point-covering candidates")
        heads.train()
        order = rng.permutation(len(corpus))
        sums = {"loss": 0.0, "score": 0.0, "reg": 0.0}
        n_batches = 0
        for b0 in range(0, len(order), config.batch_size):
            batch = order[b0:b0 + config.batch_size]
            l_score = torch.zeros(())
            l_reg = torch.zeros(())
            n_s = n_r = 0
            for i in batch:
                sm = samples[i]
                X = net(feats[i], mem.snapshot()).X_e if config.joint_finetune else sm.X
                if config.enable_score:
                    k = len(sm.score_pos) + len(sm.nps)
                    if k:
                        l_score = l_score + k * loss_score(sm.score_pos, sm.nps, sm.rps, X, heads, config.epsilon,
                                                           config.enable_rp_matching)
                        n_s += k
                if config.enable_reg and sm.pps:
                    l_reg = l_reg + len(sm.pps) * loss_reg(sm.pps, sm.rps, X, heads, config.epsilon, refs=sm.reg_refs)
                    n_r += len(sm.pps)
            l_score = l_score / max(n_s, 1)
            l_reg = l_reg / max(n_r, 1)
            loss = l_score + config.lambda2 * l_reg
            if not torch.isfinite(loss):
                raise DivergenceError(f"non-finite instance loss at epoch {epoch}: score={l_score.item()}, reg={l_reg.item()}")
            if loss.requires_grad:
                opt.zero_grad()
                loss.backward()
                opt.step()
            sums["loss"] += loss.item()
            sums["score"] += l_score.item()
            sums["reg"] += l_reg.item()
            n_batches += 1
        row = {"stage": "instance", "epoch": epoch, **{k: v / max(n_batches, 1) for k, v in sums.items()},
               "n_rp": sum(len(s.rps) for s in samples), "n_pp": sum(len(s.pps) for s in samples),
               "n_np": sum(len(s.nps) for s in samples)}
        history.append(row)
        log.info("instance epoch %d loss %.5f", epoch, row["loss"])
        if log_path is not None:
            with open(log_path, "a") as fh:
                fh.write(json.dumps(row) + "\n")
    for prm in net.parameters():
        prm.requires_grad_(True)
    heads.eval()
    net.eval()
    return heads, history

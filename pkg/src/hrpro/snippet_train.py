"""Stage-1 training: pseudo snippet mining, focal baseline loss, prototype
contrastive loss and the optimisation loop."""

import json
import logging
import math
from dataclasses import dataclass

import numpy as np
import torch

from . import kernels
from .errors import DivergenceError
from .snippet_net import SnippetNet, memory_init, memory_update_many

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-7


@dataclass(frozen=True)
class PseudoSnippets:
    action: tuple = ()      # ((t, c), ...) sorted
    background: tuple = ()  # (t, ...) sorted

    @property
    def n_act(self):
        return len(self.action)

    @property
    def n_bkg(self):
        return len(self.background)

    def with_points(self, points):
        """Add every annotated point as an action snippet of its own class."""
        act = sorted(set(self.action) | {(p.t, p.label) for p in points})
        claimed = {t for t, _ in act}
        return PseudoSnippets(tuple(act), tuple(t for t in self.background if t not in claimed))


def generate_pseudo_snippets(A, points, theta1=0.95, theta2=0.1):
    """Mine pseudo action / background snippets around sorted point annotations.

    Each point scans outward toward its neighbours (video edges for the first
    and last point). Action snippets extend while ``A > theta1`` and stop at
    the first failure; background snippets are those with ``A < theta2`` or
    the attention minimum of the scanned interval. A snippet claimed as
    action is never background.
    """
    if not points:
        return PseudoSnippets()
    A = np.ascontiguousarray(A, dtype=np.float64)
    pts = np.array([p.t for p in points], dtype=np.int64)
    labels = np.array([p.label for p in points], dtype=np.int64)
    act_t, owner, bkg = kernels.pseudo_snippets(A, pts, float(theta1), float(theta2))
    action = sorted(set(zip(act_t.tolist(), labels[owner].tolist())))
    bkg[act_t] = False
    return PseudoSnippets(tuple(action), tuple(np.nonzero(bkg)[0].tolist()))


def focal_term(p, gamma=2.0):
    """``-(1-p)^gamma * log(p)`` with ``p`` clamped to ``[1e-7, 1]``."""
    if isinstance(p, torch.Tensor):
        p = p.clamp(PROB_FLOOR, 1.0)
        return -((1.0 - p) ** gamma) * torch.log(p)
    p = min(max(float(p), PROB_FLOOR), 1.0)
    return -((1.0 - p) ** gamma) * math.log(p)


def loss_base(P, A, ps, gamma=2.0, all_classes=True):
    """Focal loss on pseudo action snippets (via P) and background (via 1-A).

    With ``all_classes`` each action snippet contributes a binary focal term
    for every class, the annotated class as positive and the rest as
    negatives; otherwise only the annotated class is scored.
    """
    zero = P.new_zeros(())
    act = zero
    if ps.n_act:
        t = torch.tensor([a[0] for a in ps.action], dtype=torch.long)
        c = torch.tensor([a[1] for a in ps.action], dtype=torch.long)
        if all_classes:
            onehot = torch.zeros(len(t), P.shape[1], dtype=torch.bool)
            onehot[torch.arange(len(t)), c] = True
            rows = P[t]
            act = focal_term(torch.where(onehot, rows, 1.0 - rows), gamma).sum() / ps.n_act
        else:
            act = focal_term(P[t, c], gamma).sum() / ps.n_act
    bkg = zero
    if ps.n_bkg:
        tb = torch.tensor(ps.background, dtype=torch.long)
        bkg = focal_term(1.0 - A[tb], gamma).sum() / ps.n_bkg
    return act + bkg


def _normalize(x):
    return x / x.norm(dim=-1, keepdim=True).clamp_min(1e-12)


def loss_contra(X, prototypes, ps, tau=0.1, split_logs=False):
    """Prototype contrastive loss over pseudo action snippets.

    Per action snippet of class c the two ratios (against other prototypes and
    against this video's background snippets) are summed inside one log.
    Terms are averaged within each class, then over the classes present.
    Prototypes are treated as constants.
    """
    if not ps.n_act:
        return X.new_zeros(())
    M = _normalize(prototypes.detach().to(X.dtype))
    logits = _normalize(X) @ M.T / tau                      # T x C, log s(x_t, m_k)
    t = torch.tensor([a[0] for a in ps.action], dtype=torch.long)
    c = torch.tensor([a[1] for a in ps.action], dtype=torch.long)
    pos = logits[t, c]
    log_f1 = pos - torch.logsumexp(logits[t], dim=1)
    if ps.n_bkg:
        tb = torch.tensor(ps.background, dtype=torch.long)
        bkg = logits[tb][:, c].T                            # n_act x n_bkg, log s(x_j, m_c)
        log_f2 = pos - torch.logsumexp(torch.cat([pos[:, None], bkg], dim=1), dim=1)
    else:
        log_f2 = torch.zeros_like(pos)
    terms = log_f1 + log_f2 if split_logs else torch.logaddexp(log_f1, log_f2)

    classes = torch.unique(c)
    per_class = torch.stack([terms[c == k].mean() for k in classes])
    return -per_class.mean()


def snippet_loss(out, rec, prototypes, config):
    """Per-video stage-1 objective; returns (total, base, contra, pseudo)."""
    ps = generate_pseudo_snippets(out.A.detach().cpu().numpy(), rec.points, config.theta1, config.theta2)
    if config.include_point_snippets:
        ps = ps.with_points(rec.points)
    lb = loss_base(out.P, out.A, ps, config.focal_gamma, config.base_all_classes)
    if config.enable_contra and config.lambda1 != 0:
        lc = loss_contra(contrast_features(out, config), prototypes, ps, config.tau, config.contra_split_logs)
    else:
        lc = lb.new_zeros(())
    return lb + config.lambda1 * lc, lb, lc, ps


def contrast_features(out, config):
    """Feature space shared by the prototype memory and the contrastive loss."""
    return out.X_rab if config.memory_space == "rab" else out.X_e


def _mean_embed_fn(net, bootstrap):
    def embed(rec):
        with torch.no_grad():
            X = torch.tensor(np.array(rec.features), dtype=torch.float32)
            return net(X, bootstrap).X_e.numpy()
    return embed


def build_snippet_model(corpus, num_classes, config):
    """Fresh network plus a prototype memory initialised from the points.

    With ``memory_space="rab"`` the prototypes start as raw point-feature
    means and track attention-block outputs. With ``"embedded"`` they live in
    the embedding space, bootstrapped by averaging embedded point features
    computed against raw-feature prototypes.
    """
    torch.manual_seed(config.seed)
    D = corpus[0].D
    net = SnippetNet(D, num_classes, config.n_rab, config.enable_rab)
    raw = memory_init(corpus, num_classes, mu=config.mu)
    if config.memory_space == "rab":
        return net, raw
    mem = memory_init(corpus, num_classes, _mean_embed_fn(net, raw.snapshot()), mu=config.mu)
    return net, mem


def train_snippet_stage(corpus, num_classes, config, on_epoch_end=None, log_path=None):
    """Optimise ``L_base + lambda1 * L_contra``; returns (net, memory, history)."""
    corpus = [r.without_gt() for r in corpus]
    assert all(r.gt_instances is None for r in corpus)
    net, mem = build_snippet_model(corpus, num_classes, config)
    opt = torch.optim.Adam(net.parameters(), lr=config.lr, weight_decay=config.weight_decay)
    rng = np.random.default_rng(config.seed)
    feats = [torch.tensor(np.array(r.features), dtype=torch.float32) for r in corpus]
    history = []

    for epoch in range(config.epochs_snippet):
        net.train()
        order = rng.permutation(len(corpus))
        sums = {"loss": 0.0, "base": 0.0, "contra": 0.0, "n_act": 0, "n_bkg": 0}
        for b0 in range(0, len(order), config.batch_size):
            batch = order[b0:b0 + config.batch_size]
            snap = mem.snapshot()
            total = 0.0
            pending_labels, pending_feats = [], []
            for i in batch:
                out = net(feats[i], snap)
                loss, lb, lc, ps = snippet_loss(out, corpus[i], snap, config)
                if not torch.isfinite(loss):
                    raise DivergenceError(
                        f"non-finite snippet loss at epoch {epoch}, video {corpus[i].video_id}: "
                        f"base={lb.item()}, contra={lc.item()}")
                total = total + loss
                sums["base"] += lb.item()
                sums["contra"] += lc.item()
                sums["n_act"] += ps.n_act
                sums["n_bkg"] += ps.n_bkg
                if ps.n_act:
                    t = [a[0] for a in ps.action]
                    pending_labels.append(np.array([a[1] for a in ps.action]))
                    pending_feats.append(contrast_features(out, config).detach()[t].numpy())
            total = total / len(batch)
            opt.zero_grad()
            total.backward()
            opt.step()
            sums["loss"] += total.item() * len(batch)
            # memory writes happen after the step, outside autograd
            if pending_labels:
                memory_update_many(mem, np.concatenate(pending_labels), np.concatenate(pending_feats))
        n = len(corpus)
        row = {"stage": "snippet", "epoch": epoch, "loss": sums["loss"] / n, "base": sums["base"] / n,
               "contra": sums["contra"] / n, "n_act": sums["n_act"], "n_bkg": sums["n_bkg"]}
        history.append(row)
        log.info("snippet epoch %d loss %.5f", epoch, row["loss"])
        if log_path is not None:
            with open(log_path, "a") as fh:
                fh.write(json.dumps(row) + "\n")
        if on_epoch_end is not None:
            net.eval()
            on_epoch_end(epoch, net, mem)
    net.eval()
    return net, mem, history

"""Stage-1 network: reliability-aware attention, embedding and snippet heads.

The prototype memory is plain state, not a parameter: reads see a detached
snapshot and writes happen outside the autograd graph.
"""

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from . import kernels
from .errors import DimensionError, InitializationError, StateError


class PrototypeMemory:
    """One momentum-averaged prototype vector per class."""

    def __init__(self, prototypes, mu=0.999, initialized=True):
        self.prototypes = np.array(prototypes, dtype=np.float64)
        if self.prototypes.ndim != 2:
            raise DimensionError("prototypes must be a C x D matrix")
        self.mu = float(mu)
        self.initialized = initialized

    @classmethod
    def empty(cls, C, D, mu=0.999):
        return cls(np.zeros((C, D)), mu, initialized=False)

    @property
    def C(self):
        return self.prototypes.shape[0]

    @property
    def D(self):
        return self.prototypes.shape[1]

    def snapshot(self, dtype=torch.float32):
        if not self.initialized:
            raise StateError("prototype memory read before initialization")
        return torch.tensor(self.prototypes, dtype=dtype)

    def copy(self):
        return PrototypeMemory(self.prototypes.copy(), self.mu, self.initialized)


def memory_init(corpus, num_classes, embed_fn=None, mu=0.999):
    """Class-wise mean of the (embedded) features at annotated points."""
    sums, counts = None, np.zeros(num_classes, dtype=np.int64)
    for rec in corpus:
        if not rec.points:
            continue
        feats = rec.features if embed_fn is None else embed_fn(rec)
        feats = np.asarray(feats, dtype=np.float64)
        if sums is None:
            sums = np.zeros((num_classes, feats.shape[1]))
        for p in rec.points:
            sums[p.label] += feats[p.t]
            counts[p.label] += 1
    missing = [c for c in range(num_classes) if counts[c] == 0]
    if missing:
        names = ", ".join(f"class {c}" for c in missing)
        raise InitializationError(f"no point annotations for {names}; cannot initialize prototypes")
    return PrototypeMemory(sums / counts[:, None], mu)


def memory_update(mem, c, x):
    """EMA write of one feature into row ``c``; returns ``mem`` (mutated)."""
    return memory_update_many(mem, np.array([c]), np.asarray(x, dtype=np.float64)[None, :])


def memory_update_many(mem, labels, feats):
    if not mem.initialized:
        raise StateError("memory_update called on uninitialized memory")
    feats = np.ascontiguousarray(feats, dtype=np.float64)
    if feats.size == 0:
        return mem
    if not np.all(np.isfinite(feats)):
        raise StateError("non-finite feature passed to memory_update")
    kernels.ema_rows(mem.prototypes, np.ascontiguousarray(labels, dtype=np.int64), feats, mem.mu)
    return mem


class ReliabilityAttentionBlock(nn.Module):
    """Single-head attention whose keys/values also include the class prototypes."""

    def __init__(self, D):
        super().__init__()
        self.D = D
        self.f_q = nn.Linear(D, D)
        self.f_k = nn.Linear(D, D)
        self.f_v = nn.Linear(D, D)
        self.ln1 = nn.LayerNorm(D)
        self.ffl = nn.Sequential(nn.Linear(D, 4 * D), nn.GELU(), nn.Linear(4 * D, D))
        self.ln2 = nn.LayerNorm(D)

    def forward(self, X, prototypes, return_parts=False):
        if X.shape[-1] != self.D or prototypes.shape[-1] != self.D:
            raise DimensionError(f"expected feature dim {self.D}, got {X.shape[-1]} / {prototypes.shape[-1]}")
        Z = torch.cat([X, prototypes.detach()], dim=0)
        Q = self.f_q(X)
        K = self.f_k(Z)
        V = self.f_v(Z)
        attn = torch.softmax(Q @ K.T / math.sqrt(self.D), dim=-1)
        pre_ln = X + attn @ V
        H = self.ln1(pre_ln)
        out = self.ln2(H + self.ffl(H))
        if return_parts:
            return out, {"attn": attn, "pre_ln": pre_ln}
        return out


@dataclass
class SnippetOutputs:
    X_rab: torch.Tensor
    X_e: torch.Tensor
    S: torch.Tensor
    A: torch.Tensor
    P: torch.Tensor


class SnippetNet(nn.Module):
    def __init__(self, D, C, n_rab=2, enable_rab=True):
        super().__init__()
        self.D, self.C = D, C
        self.enable_rab = enable_rab
        self.rab = nn.ModuleList([ReliabilityAttentionBlock(D) for _ in range(n_rab if enable_rab else 0)])
        self.embed = nn.Linear(D, D)
        self.cls = nn.Linear(D, C)
        self.att = nn.Linear(D, 1)

    def rab_forward(self, X, prototypes, return_attn=False):
        attns = []
        for block in self.rab:
            X, parts = block(X, prototypes, return_parts=True)
            attns.append(parts["attn"])
        return (X, attns) if return_attn else X

    def heads_forward(self, X_rab):
        X_e = torch.relu(self.embed(X_rab))
        S = torch.sigmoid(self.cls(X_e))
        A = torch.sigmoid(self.att(X_e)).squeeze(-1)
        return SnippetOutputs(X_rab, X_e, S, A, S * A[:, None])

    def forward(self, X, prototypes):
        return self.heads_forward(self.rab_forward(X, prototypes))


def rab_forward(X, mem, net):
    """Functional form: run the attention stack of ``net`` against ``mem``."""
    if isinstance(mem, PrototypeMemory):
        mem = mem.snapshot(X.dtype)
    return net.rab_forward(X, mem)


def heads_forward(X_rab, net):
    return net.heads_forward(X_rab)


@torch.no_grad()
def snippet_outputs_np(net, rec, mem):
    """Run the frozen network on one record; returns numpy arrays."""
    dtype = next(net.parameters()).dtype
    X = torch.tensor(np.array(rec.features), dtype=dtype)
    out = net(X, mem.snapshot(dtype))
    return SnippetOutputs(*(t.numpy().astype(np.float64) for t in (out.X_rab, out.X_e, out.S, out.A, out.P)))

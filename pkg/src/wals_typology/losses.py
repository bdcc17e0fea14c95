"""Reciprocal-frequency class weights, logit masking, and the two training losses.

Targets are ``(B, F)`` integer arrays holding the gold value index of each
feature (catalog order) or ``-1`` where the language leaves it unattested.
Unattested features contribute nothing to either loss.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .wals_schema import LabelSpace

MASK_VALUE = -1e9


def class_weight(N_L, N_c, M_L):
    """``N_L / (N_c * M_L)``, or 0 for a value never seen in training."""
    if M_L < 1:
        raise ValueError("a feature must have at least one value")
    if N_c == 0:
        return 0 * N_L
    return N_L / (N_c * M_L)


@dataclass(frozen=True)
class ClassWeights:
    w: np.ndarray               # (C,)
    counts: np.ndarray          # (C,) N_c
    feature_counts: np.ndarray  # (F,) N_L
    sizes: np.ndarray           # (F,) M_L
    n_examples: int = 0

    def task_scale(self) -> np.ndarray:
        """Per-feature multiplier ``N / (F * N_L)`` for the optional multi-task scaling."""
        F = len(self.feature_counts)
        with np.errstate(divide="ignore"):
            s = self.n_examples / (F * self.feature_counts.astype(np.float64))
        return np.where(self.feature_counts > 0, s, 0.0)

    def to_text(self, space: LabelSpace) -> str:
        buf = io.StringIO()
        buf.write("feature_id,value_index,N_c,w\n")
        for c, (fid, v) in enumerate(space.classes):
            buf.write(f"{fid},{v},{int(self.counts[c])},{self.w[c]:.6g}\n")
        return buf.getvalue()


def build_weights(counts: Mapping[tuple[str, int], int], space: LabelSpace, n_examples: int = 0) -> ClassWeights:
    """Class weights from training-split (feature, value) counts."""
    Nc = np.zeros(space.C, dtype=np.int64)
    for key, n in counts.items():
        Nc[space.class_of[key]] = n
    sizes = space.sizes
    NL = np.array([Nc[space.feature_slice[f].start:space.feature_slice[f].stop].sum()
                   for f in space.feature_ids], dtype=np.int64)
    w = np.zeros(space.C)
    for j, fid in enumerate(space.feature_ids):
        for c in space.feature_slice[fid]:
            w[c] = class_weight(int(NL[j]), int(Nc[c]), int(sizes[j]))
    return ClassWeights(w, Nc, NL, sizes, n_examples)


def mask_logits(logits, observed):
    return np.where(observed, logits, MASK_VALUE)


def _onehot(targets, space: LabelSpace):
    """Gold indicator ``(B, C)`` and attested-feature indicator ``(B, C)``."""
    B = targets.shape[0]
    offsets = space.offsets
    pos = np.zeros((B, space.C), dtype=bool)
    b, f = np.nonzero(targets >= 0)
    pos[b, offsets[f] + targets[b, f]] = True
    attested = (targets >= 0)[:, np.repeat(np.arange(space.n_features), space.sizes)]
    return pos, attested


def flat_loss(logits, targets, space: LabelSpace, weights: ClassWeights, two_sided: bool = False):
    """Weighted sigmoid cross-entropy over all classes.

    The default keeps only the gold-class terms ``-w(c) log sigmoid(z_c)``.
    ``two_sided`` adds the unweighted ``-log(1 - sigmoid(z))`` term for every
    other observed class of an attested feature. Unobserved classes never
    enter. Normalized by batch size. Returns ``(loss, dlogits)``.
    """
    N = logits.shape[0]
    observed = space.observed
    pos, attested = _onehot(targets, space)
    pos &= observed
    wpos = np.where(pos, weights.w, 0.0)
    loss = np.sum(wpos * np.logaddexp(0.0, -logits))
    p = 0.5 * (1.0 + np.tanh(0.5 * logits))
    dlogits = -wpos * (1.0 - p)
    if two_sided:
        neg = attested & ~pos & observed
        loss += np.sum(np.where(neg, np.logaddexp(0.0, logits), 0.0))
        dlogits = dlogits + np.where(neg, p, 0.0)
    dlogits[:, ~observed] = 0.0
    return loss / N, (dlogits / N).astype(logits.dtype)


def log_softmax(z):
    m = z.max(axis=-1, keepdims=True)
    s = z - m
    return s - np.log(np.exp(s).sum(axis=-1, keepdims=True))


def multitask_loss(logits, targets, space: LabelSpace, weights: ClassWeights, task_scale: bool = False):
    """Sum over features of the batch-mean weighted softmax cross-entropy.

    Each feature's block is softmaxed over its observed values only.
    """
    N = logits.shape[0]
    dlogits = np.zeros_like(logits)
    total = 0.0
    scale = weights.task_scale() if task_scale else np.ones(space.n_features)
    rows = np.arange(N)
    for j, fid in enumerate(space.feature_ids):
        sl = space.feature_slice[fid]
        have = targets[:, j] >= 0
        if not have.any():
            continue
        t = targets[have, j]
        obs = space.observed[sl.start:sl.stop]
        if not obs[t].all():
            raise ValueError(f"feature {fid}: gold value is an unobserved class")
        z = mask_logits(logits[have, sl.start:sl.stop], obs)
        logp = log_softmax(z)
        w = weights.w[sl.start + t]
        r = rows[:len(t)]
        total += scale[j] * np.sum(-w * logp[r, t]) / N
        g = np.exp(logp)
        g[r, t] -= 1.0
        g *= (scale[j] * w / N)[:, None]
        g[:, ~obs] = 0.0
        dlogits[have, sl.start:sl.stop] = g
    return total, dlogits


def masked_softmax_probs(logits, space: LabelSpace) -> np.ndarray:
    """Per-feature softmax with unobserved classes masked, laid out like the logits.

    A feature with no observed value gets no probability mass at all.
    """
    out = np.zeros(logits.shape, dtype=np.float64)
    for fid in space.feature_ids:
        sl = space.feature_slice[fid]
        if not space.observed[sl.start:sl.stop].any():
            continue
        z = mask_logits(logits[..., sl.start:sl.stop].astype(np.float64), space.observed[sl.start:sl.stop])
        out[..., sl.start:sl.stop] = np.exp(log_softmax(z))
    return out


def l2_penalty(params: Mapping[str, np.ndarray], names, lam: float):
    """``lam * sum ||W||^2`` over the named arrays, with its gradient."""
    value = 0.0
    grads = {}
    for n in names:
        W = params[n]
        value += lam * float(np.sum(W.astype(np.float64) ** 2))
        grads[n] = (2 * lam) * W
    return value, grads

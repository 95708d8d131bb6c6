"""Stochastic-Block-Model attention.

Nodes are softly assigned to ``k`` learned clusters from their queries and keys;
a symmetric cluster-to-cluster link matrix turns the two assignments into an
expected link probability for every node pair. A Bernoulli draw of those
probabilities masks the attention logits, and the straight-through rule in
:func:`csatrans.autodiff.ste_mask` routes gradients back to the probabilities.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import (
    Tensor,
    dropout,
    matmul,
    mul,
    scale,
    sigmoid,
    softmax,
    ste_mask,
    sum_,
    swapaxes,
)
from .errors import EmptyMask, ShapeError
from .nn import Linear, Module, merge_heads, normal, split_heads
from .relations import RelationMatrices

K_CLUSTERS = 10
SPARSITY = 1e-2
EVAL_THRESHOLD = 0.5


@dataclass
class SbmMaskBundle:
    link_prob: Tensor
    assign_q: Tensor
    assign_k: Tensor
    cluster_link: Tensor
    mask: np.ndarray | None = None


def link_probability(q: Tensor, k: Tensor, clusters: Tensor) -> SbmMaskBundle:
    """Expected connection probability for every node pair.

    ``q``, ``k``: ``[..., N, d]``; ``clusters``: ``[..., k, d]`` (one set per head).
    """
    if q.shape[-1] != clusters.shape[-1] or k.shape[-1] != clusters.shape[-1]:
        raise ShapeError(f"query/key width {q.shape[-1]} does not match clusters {clusters.shape}")
    ct = swapaxes(clusters, -1, -2)
    assign_q = softmax(matmul(q, ct))
    assign_k = softmax(matmul(k, ct))
    raw = sigmoid(matmul(clusters, ct))
    cluster_link = scale(raw + swapaxes(raw, -1, -2), 0.5)
    link_prob = matmul(matmul(assign_q, cluster_link), swapaxes(assign_k, -1, -2))
    # saturated products can overshoot 1 by an ulp; the clamp only moves values by rounding error
    np.clip(link_prob.data, 0.0, 1.0, out=link_prob.data)
    return SbmMaskBundle(link_prob, assign_q, assign_k, cluster_link)


def force_diagonal(mask: np.ndarray) -> np.ndarray:
    n = mask.shape[-1]
    return mask | np.eye(n, dtype=bool)


def sample_mask(link_prob, rng: np.random.Generator | None, mode: str = "train") -> np.ndarray:
    """Bernoulli mask in train mode, ``p >= 0.5`` in eval mode; diagonal always kept."""
    p = link_prob.data if isinstance(link_prob, Tensor) else np.asarray(link_prob)
    if mode == "train":
        if rng is None:
            raise ValueError("train-mode sampling needs an rng stream")
        mask = rng.random(p.shape) < p
    elif mode == "eval":
        mask = p >= EVAL_THRESHOLD
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return force_diagonal(mask)


def masked_attention(q: Tensor, k: Tensor, v: Tensor, mask: np.ndarray, link_prob: Tensor | None = None,
                     straight_through: bool = True, return_weights: bool = False):
    """Attention restricted to ``mask`` (masked pairs get exactly zero weight).

    When ``link_prob`` is given the masked logits go through the
    straight-through op so the probabilities receive gradient.
    """
    scores = scale(matmul(q, swapaxes(k, -1, -2)), 1.0 / math.sqrt(q.shape[-1]))
    if link_prob is not None:
        scores = ste_mask(scores, link_prob, mask, straight_through)
    weights = softmax(scores, mask)
    out = matmul(weights, v)
    return (out, weights) if return_weights else out


def sparsity_penalty(link_prob: Tensor, lam: float, valid: np.ndarray | None = None) -> Tensor:
    """``lam * mean(link_prob)``, the mean taken over valid pairs only."""
    if valid is None:
        return scale(link_prob.mean(), lam)
    w = np.broadcast_to(valid, link_prob.shape).astype(float)
    return scale(sum_(mul(link_prob, w)), lam / max(w.sum(), 1.0))


def pair_validity(key_valid: np.ndarray) -> np.ndarray:
    """``[B, N]`` -> ``[B, 1, N, N]`` pairs where both ends are real nodes."""
    return (key_valid[:, None, :, None] & key_valid[:, None, None, :])


def mask_relationship_breakdown(mask: np.ndarray, rel: RelationMatrices) -> dict[str, float]:
    """Share of unmasked off-diagonal pairs in each relation category.

    The three ratios are computed independently over the same denominator, so a
    pair that is both parent-child and sibling would count in both.
    """
    mask = np.asarray(mask, dtype=bool)
    n = mask.shape[-1]
    off = mask & ~np.eye(n, dtype=bool)
    total = int(off.sum())
    if total == 0:
        raise EmptyMask("no off-diagonal pair is unmasked")
    pc = rel.parent_child != 0
    sb = rel.sibling != 0
    return {
        "parent_child_pct": float((off & pc).sum() / total),
        "sibling_pct": float((off & sb).sum() / total),
        "neither_pct": float((off & ~pc & ~sb).sum() / total),
        "pairs": total,
    }


class SbmAttention(Module):
    """Multi-head self-attention with SBM masks (``mode="sbm"``) or dense masks (``"vanilla"``)."""

    def __init__(self, rng: np.random.Generator, d_model: int, heads: int, k_clusters: int = K_CLUSTERS,
                 mode: str = "sbm", rate: float = 0.1):
        if mode not in ("sbm", "vanilla"):
            raise ValueError(f"unknown attention mode {mode!r}")
        self.q = Linear(rng, d_model, d_model)
        self.k = Linear(rng, d_model, d_model)
        self.v = Linear(rng, d_model, d_model)
        self.o = Linear(rng, d_model, d_model)
        self.clusters = normal(rng, heads, k_clusters, d_model // heads) if mode == "sbm" else None
        self.heads = heads
        self.mode = mode
        self.rate = rate
        self.frozen_mask: np.ndarray | None = None
        self.straight_through = True
        self.last: dict = {}

    def __call__(self, x: Tensor, key_valid: np.ndarray, rng: np.random.Generator | None = None,
                 drop_rng: np.random.Generator | None = None) -> tuple[Tensor, Tensor | None]:
        """Returns (output, link_prob or None)."""
        q = split_heads(self.q(x), self.heads)
        k = split_heads(self.k(x), self.heads)
        v = split_heads(self.v(x), self.heads)
        n = x.shape[-2]
        keys = key_valid[:, None, None, :]
        link_prob = None
        if self.mode == "vanilla":
            mask = np.broadcast_to(keys | np.eye(n, dtype=bool), (x.shape[0], self.heads, n, n))
            out, weights = masked_attention(q, k, v, mask, return_weights=True)
        else:
            bundle = link_probability(q, k, self.clusters)
            link_prob = bundle.link_prob
            if self.frozen_mask is not None:
                mask = np.broadcast_to(self.frozen_mask, link_prob.shape)
            else:
                mask = sample_mask(link_prob, rng, "train" if self.training else "eval")
            mask = force_diagonal(mask & keys)
            out, weights = masked_attention(q, k, v, mask, link_prob, self.straight_through, True)
            self.last["link_prob"] = link_prob.data
        self.last["mask"] = np.asarray(mask)
        self.last["weights"] = weights.data
        out = dropout(merge_heads(out), self.rate, drop_rng, self.training)
        return self.o(out), link_prob

"""Code Structure Embedder: disentangled attention over parent-child/sibling distances.

The attention logit between nodes i and j in a head is the sum of a
content-content term, a content-to-relative-position term and a
relative-position-to-content term, divided by sqrt(3 * d_head). Each head uses
either the parent-child or the sibling distance; pairs at distance 0 (other
than i == j) are masked. The relative embedding tables have ``2 * p_max + 1``
rows regardless of tree size.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..autodiff import (
    Tensor,
    dropout,
    matmul,
    reshape,
    softmax,
    swapaxes,
    take_along_last,
)
from ..errors import ConfigError
from ..nn import Embedding, FeedForward, LayerNorm, Linear, Module, merge_heads, normal, split_heads
from ..relations import KINDS, P_MAX, RelationMatrices, to_indices


@dataclass
class CseConfig:
    d_pe: int = 256
    layers: int = 4
    heads: int = 8
    p_max: int = P_MAX
    head_assignment: tuple[str, ...] | None = None
    d_ff: int | None = None
    dropout: float = 0.1
    mask_unrelated: bool = True

    def __post_init__(self):
        if self.heads < 1 or self.d_pe % self.heads:
            raise ConfigError(f"d_pe={self.d_pe} is not divisible by heads={self.heads}")
        if self.p_max < 1:
            raise ConfigError("p_max must be at least 1")
        if self.head_assignment is None:
            self.head_assignment = tuple(KINDS[h % 2] for h in range(self.heads))
        self.head_assignment = tuple(self.head_assignment)
        if len(self.head_assignment) != self.heads or not set(self.head_assignment) <= set(KINDS):
            raise ConfigError(f"head_assignment {self.head_assignment} does not cover {self.heads} heads")
        if self.heads >= 2 and set(self.head_assignment) != set(KINDS):
            raise ConfigError("head_assignment needs at least one parent_child and one sibling head")
        if self.d_ff is None:
            self.d_ff = 4 * self.d_pe

    @property
    def d_head(self) -> int:
        return self.d_pe // self.heads


@dataclass
class RelationBatch:
    """Padded relation indices for a batch of trees."""

    parent_child: np.ndarray  # [B, N, N] indices in [0, 2p]
    sibling: np.ndarray
    valid: np.ndarray  # [B, N] bool
    p_max: int = P_MAX
    sizes: list[int] = field(default_factory=list)

    @classmethod
    def from_relations(cls, rels: Sequence[RelationMatrices], n_max: int | None = None) -> "RelationBatch":
        p_max = rels[0].p_max
        sizes = [len(r) for r in rels]
        n = max(sizes) if n_max is None else n_max
        pc = np.full((len(rels), n, n), p_max, dtype=np.int64)
        sb = np.full((len(rels), n, n), p_max, dtype=np.int64)
        valid = np.zeros((len(rels), n), dtype=bool)
        for b, r in enumerate(rels):
            m = len(r)
            pc[b, :m, :m] = to_indices(r.parent_child, p_max)
            sb[b, :m, :m] = to_indices(r.sibling, p_max)
            valid[b, :m] = True
        return cls(pc, sb, valid, p_max, sizes)


class CseLayer(Module):
    def __init__(self, rng: np.random.Generator, cfg: CseConfig):
        d, rows = cfg.d_pe, 2 * cfg.p_max + 1
        self.q = Linear(rng, d, d)
        self.k = Linear(rng, d, d)
        self.v = Linear(rng, d, d)
        self.q_rel = Linear(rng, d, d, bias=False)
        self.k_rel = Linear(rng, d, d, bias=False)
        self.rel_parent = normal(rng, rows, d)
        self.rel_sibling = normal(rng, rows, d)
        self.o = Linear(rng, d, d)
        self.norm1 = LayerNorm(d)
        self.ffn = FeedForward(rng, d, cfg.d_ff, cfg.dropout)
        self.norm2 = LayerNorm(d)
        self.cfg = cfg
        self._is_parent = np.array([k == "parent_child" for k in cfg.head_assignment])

    def relative_keys(self, proj: Linear, lo: int = 0, hi: int | None = None) -> Tensor:
        """[H, rows, d_head] projected table rows ``lo..hi``, each head reading its own relation."""
        h, dh = self.cfg.heads, self.cfg.d_head
        hi = self.rel_parent.shape[0] - 1 if hi is None else hi
        rows = hi - lo + 1
        sel = self._is_parent[:, None, None].astype(float)
        per = []
        for table in (self.rel_parent, self.rel_sibling):
            if rows != table.shape[0]:
                table = table[lo : hi + 1]
            t = reshape(matmul(table, proj.weight), (rows, h, dh))
            per.append(swapaxes(t, 0, 1))
        return per[0] * sel + per[1] * (1.0 - sel)

    def head_indices(self, rb: RelationBatch) -> np.ndarray:
        return np.where(self._is_parent[None, :, None, None], rb.parent_child[:, None], rb.sibling[:, None])

    def attention_mask(self, rb: RelationBatch, idx: np.ndarray) -> np.ndarray:
        n = idx.shape[-1]
        eye = np.eye(n, dtype=bool)
        if self.cfg.mask_unrelated:
            mask = (idx != rb.p_max) | eye
        else:
            mask = np.ones(idx.shape, dtype=bool)
        return mask & rb.valid[:, None, None, :]

    def __call__(self, x: Tensor, rb: RelationBatch, rng: np.random.Generator | None = None) -> Tensor:
        cfg = self.cfg
        q = split_heads(self.q(x), cfg.heads)
        k = split_heads(self.k(x), cfg.heads)
        v = split_heads(self.v(x), cfg.heads)
        idx = self.head_indices(rb)
        # only distances present in this batch need table rows
        lo, hi = int(idx.min()), int(idx.max())
        kr = self.relative_keys(self.k_rel, lo, hi)
        qr = self.relative_keys(self.q_rel, lo, hi)
        rel_idx = idx - lo
        content = matmul(q, swapaxes(k, -1, -2))
        c2p = take_along_last(matmul(q, swapaxes(kr, -1, -2)), rel_idx)
        p2c = swapaxes(take_along_last(matmul(k, swapaxes(qr, -1, -2)), rel_idx), -1, -2)
        scores = (content + c2p + p2c) / math.sqrt(3 * cfg.d_head)
        mask = self.attention_mask(rb, idx)
        weights = dropout(softmax(scores, mask), cfg.dropout, rng, self.training)
        self.last_weights = weights.data
        attn = self.o(merge_heads(matmul(weights, v)))
        x = self.norm1(x + dropout(attn, cfg.dropout, rng, self.training))
        return self.norm2(x + dropout(self.ffn(x, rng), cfg.dropout, rng, self.training))


class CodeStructureEmbedder(Module):
    def __init__(self, rng: np.random.Generator, cfg: CseConfig, node_vocab: int):
        self.embed = Embedding(rng, node_vocab, cfg.d_pe)
        self.layers = [CseLayer(rng, cfg) for _ in range(cfg.layers)]
        self.cfg = cfg

    def __call__(self, type_ids: np.ndarray, rb: RelationBatch, rng: np.random.Generator | None = None) -> Tensor:
        x = self.embed(np.asarray(type_ids))
        for layer in self.layers:
            x = layer(x, rb, rng)
        return x

    def relative_parameter_count(self) -> list[int]:
        """Per layer, the number of relative-embedding parameters."""
        return [layer.rel_parent.size + layer.rel_sibling.size for layer in self.layers]


def cse_forward(type_ids, rel: RelationMatrices, cfg: CseConfig, params: CodeStructureEmbedder) -> Tensor:
    """CSA-PE for one tree: ``[N, d_pe]``."""
    if params.cfg.d_pe != cfg.d_pe:
        raise ConfigError("parameters were built for a different d_pe")
    rb = RelationBatch.from_relations([rel])
    out = params(np.asarray(type_ids)[None, :], rb)
    return reshape(out, out.shape[1:])

"""The encoder-decoder summarizer: CSA-PE ++ type embedding -> SBM encoder -> decoder."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields
from typing import Sequence

import numpy as np

from .ast_ingest import BOS, EOS, PAD, DatasetRecord, Vocabulary
from .autodiff import Tensor, concat, dropout, gather_rows, scale
from .errors import ConfigError, PrefixTooLong
from .nn import Embedding, FeedForward, LayerNorm, Linear, Module, MultiHeadAttention
from .pe.baselines import sequential_pe
from .pe.cse import CodeStructureEmbedder, CseConfig, RelationBatch
from .relations import compute_relations
from .sbm import SbmAttention, pair_validity, sparsity_penalty


@dataclass
class ModelConfig:
    d_pe: int = 256
    d_emb: int = 256
    d_dec: int = 512
    d_ff: int = 2048
    heads: int = 8
    cse_layers: int = 4
    enc_layers: int = 4
    dec_layers: int = 4
    k_clusters: int = 10
    sparsity: float = 1e-2
    sparsity_reduction: str = "mean"
    p_max: int = 150
    max_nodes: int = 150
    max_summary: int = 50
    node_vocab: int = 10000
    summary_vocab: int = 20000
    attention_mode: str = "sbm"
    lr: float = 1e-4
    weight_decay: float = 0.01
    dropout: float = 0.1
    batch_size: int = 32
    cse_mask_unrelated: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.attention_mode not in ("sbm", "vanilla"):
            raise ConfigError(f"attention_mode must be sbm or vanilla, got {self.attention_mode!r}")
        if self.d_model % self.heads or self.d_dec % self.heads or self.d_pe % self.heads:
            raise ConfigError("d_pe, d_pe + d_emb and d_dec must all be divisible by heads")
        if self.sparsity_reduction not in ("mean", "sum"):
            raise ConfigError("sparsity_reduction must be mean or sum")

    @property
    def d_model(self) -> int:
        return self.d_pe + self.d_emb

    def cse_config(self) -> CseConfig:
        return CseConfig(
            d_pe=self.d_pe, layers=self.cse_layers, heads=self.heads, p_max=self.p_max,
            d_ff=4 * self.d_pe, dropout=self.dropout, mask_unrelated=self.cse_mask_unrelated,
        )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known - {"preset"}
        if unknown:
            raise ConfigError(f"unknown config fields {sorted(unknown)}")
        base = preset(data["preset"]).to_dict() if "preset" in data else {}
        base.update({k: v for k, v in data.items() if k != "preset"})
        return cls(**base)

    @classmethod
    def from_json(cls, path) -> "ModelConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


PRESETS = {
    "python": dict(d_pe=256, d_emb=256),
    "java": dict(d_pe=128, d_emb=640),
}


def preset(name: str, **overrides) -> ModelConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return ModelConfig(**{**PRESETS[name], **overrides})


# -- batches -----------------------------------------------------------------

@dataclass
class Batch:
    type_ids: np.ndarray  # [B, N]
    relations: RelationBatch
    node_valid: np.ndarray  # [B, N]
    dec_in: np.ndarray  # [B, T]
    dec_out: np.ndarray  # [B, T]
    origin_ids: list[str]

    def __len__(self) -> int:
        return self.type_ids.shape[0]


def make_batch(records: Sequence[DatasetRecord], node_vocab: Vocabulary, summary_vocab: Vocabulary,
               cfg: ModelConfig, pad_nodes_to: int | None = None) -> Batch:
    rels = [compute_relations(r.ast, cfg.p_max) for r in records]
    rb = RelationBatch.from_relations(rels, pad_nodes_to)
    n = rb.valid.shape[1]
    type_ids = np.full((len(records), n), PAD, dtype=np.int64)
    for b, r in enumerate(records):
        type_ids[b, : len(r.ast.nodes)] = node_vocab.encode(r.ast.types)
    targets = [summary_vocab.encode(r.summary_tokens[: cfg.max_summary]) for r in records]
    t = max(len(x) for x in targets) + 1
    dec_in = np.full((len(records), t), PAD, dtype=np.int64)
    dec_out = np.full((len(records), t), PAD, dtype=np.int64)
    for b, ids in enumerate(targets):
        dec_in[b, : len(ids) + 1] = [BOS] + ids
        dec_out[b, : len(ids) + 1] = ids + [EOS]
    return Batch(type_ids, rb, rb.valid, dec_in, dec_out, [r.ast.origin_id for r in records])


# -- network -----------------------------------------------------------------

class EncoderLayer(Module):
    def __init__(self, rng, cfg: ModelConfig):
        d = cfg.d_model
        self.attn = SbmAttention(rng, d, cfg.heads, cfg.k_clusters, cfg.attention_mode, cfg.dropout)
        self.norm1 = LayerNorm(d)
        self.ffn = FeedForward(rng, d, cfg.d_ff, cfg.dropout)
        self.norm2 = LayerNorm(d)
        self.rate = cfg.dropout

    def __call__(self, x, valid, mask_rng=None, drop_rng=None):
        a, link_prob = self.attn(x, valid, mask_rng, drop_rng)
        x = self.norm1(x + a)
        x = self.norm2(x + dropout(self.ffn(x, drop_rng), self.rate, drop_rng, self.training))
        return x, link_prob


class DecoderLayer(Module):
    def __init__(self, rng, cfg: ModelConfig):
        d = cfg.d_dec
        self.self_attn = MultiHeadAttention(rng, d, cfg.heads, rate=cfg.dropout)
        self.norm1 = LayerNorm(d)
        self.cross_attn = MultiHeadAttention(rng, d, cfg.heads, d_kv=cfg.d_model, rate=cfg.dropout)
        self.norm2 = LayerNorm(d)
        self.ffn = FeedForward(rng, d, cfg.d_ff, cfg.dropout)
        self.norm3 = LayerNorm(d)
        self.rate = cfg.dropout

    def __call__(self, y, memory, self_mask, cross_mask, drop_rng=None):
        def drop(t):
            return dropout(t, self.rate, drop_rng, self.training)

        y = self.norm1(y + drop(self.self_attn(y, mask=self_mask, rng=drop_rng)))
        y = self.norm2(y + drop(self.cross_attn(y, memory, cross_mask, drop_rng)))
        return self.norm3(y + drop(self.ffn(y, drop_rng)))


class CsaTrans(Module):
    def __init__(self, cfg: ModelConfig, node_vocab_size: int, summary_vocab_size: int,
                 rng: np.random.Generator | None = None):
        rng = np.random.default_rng([cfg.seed, 0]) if rng is None else rng
        self.cfg = cfg
        self.cse = CodeStructureEmbedder(rng, cfg.cse_config(), node_vocab_size)
        self.node_embed = Embedding(rng, node_vocab_size, cfg.d_emb)
        self.encoder = [EncoderLayer(rng, cfg) for _ in range(cfg.enc_layers)]
        self.tok_embed = Embedding(rng, summary_vocab_size, cfg.d_dec)
        self.decoder = [DecoderLayer(rng, cfg) for _ in range(cfg.dec_layers)]
        self.out = Linear(rng, cfg.d_dec, summary_vocab_size)
        self._pe_cache = sequential_pe(cfg.max_summary + 1, cfg.d_dec)

    # encoder side
    def embed_and_concat(self, batch: Batch, drop_rng=None) -> Tensor:
        pe = self.cse(batch.type_ids, batch.relations, drop_rng)
        return concat([pe, self.node_embed(batch.type_ids)], axis=-1)

    def encode(self, batch: Batch, mask_rng=None, drop_rng=None) -> tuple[Tensor, list[Tensor]]:
        x = dropout(self.embed_and_concat(batch, drop_rng), self.cfg.dropout, drop_rng, self.training)
        probs = []
        for layer in self.encoder:
            x, p = layer(x, batch.node_valid, mask_rng, drop_rng)
            if p is not None:
                probs.append(p)
        return x, probs

    def sparsity_term(self, probs: list[Tensor], node_valid: np.ndarray) -> Tensor | None:
        if not probs or self.cfg.sparsity == 0:
            return None
        valid = pair_validity(node_valid)
        terms = [sparsity_penalty(p, self.cfg.sparsity, valid) for p in probs]
        total = terms[0]
        for t in terms[1:]:
            total = total + t
        return total if self.cfg.sparsity_reduction == "sum" else scale(total, 1.0 / len(terms))

    # decoder side
    def decode(self, memory: Tensor, mem_valid: np.ndarray, prefix: np.ndarray, drop_rng=None) -> Tensor:
        """Logits ``[B, T, V]`` for every prefix position (teacher forcing)."""
        prefix = np.asarray(prefix, dtype=np.int64)
        t = prefix.shape[1]
        if t > self.cfg.max_summary + 1:
            raise PrefixTooLong(f"prefix of length {t} exceeds max_summary={self.cfg.max_summary}")
        y = scale(self.tok_embed(prefix), math.sqrt(self.cfg.d_dec)) + self._pe_cache[:t]
        y = dropout(y, self.cfg.dropout, drop_rng, self.training)
        causal = np.tril(np.ones((t, t), dtype=bool))
        self_mask = causal[None, None] & ((prefix != PAD) | (np.arange(t) == 0))[:, None, None, :]
        self_mask = self_mask | np.eye(t, dtype=bool)
        cross_mask = mem_valid[:, None, None, :]
        for layer in self.decoder:
            y = layer(y, memory, self_mask, cross_mask, drop_rng)
        return self.out(y)

    def decode_step(self, memory: Tensor, mem_valid: np.ndarray, prefix: np.ndarray) -> Tensor:
        """Next-token logits ``[B, V]`` after ``prefix`` (which starts with BOS)."""
        logits = self.decode(memory, mem_valid, prefix)
        return logits[:, -1, :]

    def type_embedding(self, type_ids) -> Tensor:
        return gather_rows(self.node_embed.weight, type_ids)

    def encoder_attention(self) -> list[SbmAttention]:
        return [layer.attn for layer in self.encoder]

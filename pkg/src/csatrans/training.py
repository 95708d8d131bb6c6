"""Training loop, greedy decoding, evaluation and checkpoints for the summarizer."""

from __future__ import annotations

import csv
import json
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .ast_ingest import EOS, DatasetRecord, Vocabulary, build_vocab
from .autodiff import cross_entropy, no_grad
from .errors import CorruptCheckpoint, EmptyCorpus, NaNLoss
from .metrics import EvalPair, evaluate
from .model import Batch, CsaTrans, ModelConfig, make_batch
from .optim import AdamW

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1

# per-purpose RNG stream ids; generators are derived from (seed, purpose, counter)
STREAM_INIT, STREAM_DROPOUT, STREAM_BERNOULLI, STREAM_SHUFFLE = 0, 1, 2, 3


def stream(seed: int, purpose: int, counter: int) -> np.random.Generator:
    return np.random.default_rng([seed, purpose, counter])


@dataclass
class TrainState:
    cfg: ModelConfig
    model: CsaTrans
    optimizer: AdamW
    node_vocab: Vocabulary
    summary_vocab: Vocabulary
    step: int = 0
    best: dict = field(default_factory=dict)

    @classmethod
    def create(cls, cfg: ModelConfig, records: Sequence[DatasetRecord]) -> "TrainState":
        node_vocab = build_vocab(records, "node_types", cfg.node_vocab)
        summary_vocab = build_vocab(records, "summary", cfg.summary_vocab)
        return cls.from_vocabs(cfg, node_vocab, summary_vocab)

    @classmethod
    def from_vocabs(cls, cfg: ModelConfig, node_vocab: Vocabulary, summary_vocab: Vocabulary) -> "TrainState":
        model = CsaTrans(cfg, len(node_vocab), len(summary_vocab), stream(cfg.seed, STREAM_INIT, 0))
        opt = AdamW(model.named_parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
        return cls(cfg, model, opt, node_vocab, summary_vocab)

    def batch(self, records: Sequence[DatasetRecord]) -> Batch:
        return make_batch(records, self.node_vocab, self.summary_vocab, self.cfg)


def bucketed_batches(records: Sequence[DatasetRecord], batch_size: int, seed: int, epoch: int) -> list[list[int]]:
    """Group indices of similar node counts; the order of groups is shuffled per epoch."""
    order = sorted(range(len(records)), key=lambda i: (len(records[i].ast.nodes), i))
    groups = [order[i : i + batch_size] for i in range(0, len(order), batch_size)]
    perm = stream(seed, STREAM_SHUFFLE, epoch).permutation(len(groups))
    return [groups[i] for i in perm]


def batch_stream(state: TrainState, records: Sequence[DatasetRecord]) -> Iterator[Batch]:
    """Endless batches, resuming at the epoch/offset implied by ``state.step``."""
    bs = state.cfg.batch_size
    per_epoch = math.ceil(len(records) / bs)
    step = state.step
    while True:
        epoch, offset = divmod(step, per_epoch)
        groups = bucketed_batches(records, bs, state.cfg.seed, epoch)
        for g in groups[offset:]:
            yield state.batch([records[i] for i in g])
            step += 1


def train_step(state: TrainState, batch: Batch) -> dict:
    """One AdamW update on teacher-forced cross entropy plus the SBM sparsity term."""
    model, cfg = state.model, state.cfg
    model.train()
    mask_rng = stream(cfg.seed, STREAM_BERNOULLI, state.step)
    drop_rng = stream(cfg.seed, STREAM_DROPOUT, state.step)
    state.optimizer.zero_grad()
    memory, probs = model.encode(batch, mask_rng, drop_rng)
    logits = model.decode(memory, batch.node_valid, batch.dec_in, drop_rng)
    ce = cross_entropy(logits, batch.dec_out, pad_id=0)
    sparsity = model.sparsity_term(probs, batch.node_valid)
    loss = ce if sparsity is None else ce + sparsity
    value = loss.item()
    if not math.isfinite(value):
        raise NaNLoss(f"loss became {value} at step {state.step} (ce={ce.item()}, batch={batch.origin_ids[:3]})")
    loss.backward()
    state.optimizer.step()
    state.step += 1
    return {
        "step": state.step,
        "loss": value,
        "sparsity_term": 0.0 if sparsity is None else sparsity.item(),
        "lr": state.optimizer.lr,
    }


def greedy_decode(state: TrainState, batch: Batch) -> list[list[int]]:
    """Argmax decoding (lowest id wins ties) until EOS or ``max_summary`` tokens."""
    model, cfg = state.model, state.cfg
    model.eval()
    with no_grad():
        memory, _ = model.encode(batch)
        b = len(batch)
        prefix = np.full((b, 1), 2, dtype=np.int64)
        done = np.zeros(b, dtype=bool)
        outputs: list[list[int]] = [[] for _ in range(b)]
        for _ in range(cfg.max_summary):
            logits = model.decode_step(memory, batch.node_valid, prefix).data
            nxt = logits.argmax(axis=-1)  # argmax returns the first (lowest id) maximum
            for i in range(b):
                if not done[i]:
                    if nxt[i] == EOS:
                        done[i] = True
                    else:
                        outputs[i].append(int(nxt[i]))
            if done.all():
                break
            prefix = np.concatenate([prefix, np.where(done, 0, nxt)[:, None]], axis=1)
    return outputs


def predict(state: TrainState, records: Sequence[DatasetRecord], batch_size: int = 32) -> list[list[str]]:
    out: list[list[str]] = []
    for i in range(0, len(records), batch_size):
        chunk = records[i : i + batch_size]
        for ids in greedy_decode(state, state.batch(chunk)):
            out.append(state.summary_vocab.decode(ids))
    return out


def evaluate_records(state: TrainState, records: Sequence[DatasetRecord], batch_size: int = 32,
                     sentence_bleu: bool = False) -> dict:
    if not records:
        raise EmptyCorpus("no records to evaluate")
    preds = predict(state, records, batch_size)
    pairs = [EvalPair(p, r.summary_tokens) for p, r in zip(preds, records)]
    return evaluate(pairs, sentence_bleu)


def train(state: TrainState, records: Sequence[DatasetRecord], steps: int, log_path=None,
          eval_every: int = 0, eval_records: Sequence[DatasetRecord] | None = None,
          stop_bleu: float | None = None, ckpt_path=None, ckpt_every: int = 0) -> list[dict]:
    """Run until ``state.step == steps`` (or ``stop_bleu`` is reached on ``eval_records``)."""
    history: list[dict] = []
    writer = None
    fh = None
    if log_path is not None:
        new = not os.path.exists(log_path) or state.step == 0
        fh = open(log_path, "w" if new else "a", newline="")
        writer = csv.DictWriter(fh, fieldnames=["step", "loss", "sparsity_term", "lr"])
        if new:
            writer.writeheader()
    try:
        batches = batch_stream(state, records)
        while state.step < steps:
            row = train_step(state, next(batches))
            history.append(row)
            if writer:
                writer.writerow(row)
                fh.flush()
            if row["step"] % 50 == 0:
                log.info("step %d loss %.4f sparsity %.5f", row["step"], row["loss"], row["sparsity_term"])
            if ckpt_path and ckpt_every and state.step % ckpt_every == 0:
                save_checkpoint(state, ckpt_path)
            if eval_every and eval_records and state.step % eval_every == 0:
                metrics = evaluate_records(state, eval_records)
                metrics["step"] = state.step
                log.info("step %d eval %s", state.step, metrics)
                if metrics["bleu4"] > state.best.get("bleu4", -1.0):
                    state.best = metrics
                if stop_bleu is not None and metrics["bleu4"] >= stop_bleu:
                    break
    finally:
        if fh:
            fh.close()
    return history


# -- checkpoints -----------------------------------------------------------------

def save_checkpoint(state: TrainState, path) -> None:
    """Flat ``.npz`` map of float64 arrays plus a JSON metadata entry."""
    arrays = {f"param.{k}": v for k, v in state.model.state_dict().items()}
    arrays.update(state.optimizer.state_dict())
    meta = {
        "version": CHECKPOINT_VERSION,
        "config": state.cfg.to_dict(),
        "step": state.step,
        "adam_t": state.optimizer.t,
        "best": state.best,
        "node_vocab": state.node_vocab.to_list(),
        "summary_vocab": state.summary_vocab.to_list(),
    }
    arrays["meta"] = np.frombuffer(json.dumps(meta).encode("utf8"), dtype=np.uint8)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        np.savez(fh, **arrays)
    os.replace(tmp, path)


def load_checkpoint(path) -> TrainState:
    path = Path(path)
    if not path.exists():
        raise CorruptCheckpoint(f"checkpoint {path} does not exist")
    try:
        with np.load(path) as data:
            arrays = {k: data[k] for k in data.files}
        meta = json.loads(arrays.pop("meta").tobytes().decode("utf8"))
    except (OSError, ValueError, KeyError) as exc:
        raise CorruptCheckpoint(f"cannot read checkpoint {path}: {exc}") from exc
    if meta.get("version") != CHECKPOINT_VERSION:
        raise CorruptCheckpoint(f"checkpoint version {meta.get('version')} != {CHECKPOINT_VERSION}")
    cfg = ModelConfig.from_dict(meta["config"])
    node_vocab = Vocabulary.from_list(meta["node_vocab"], cfg.node_vocab)
    summary_vocab = Vocabulary.from_list(meta["summary_vocab"], cfg.summary_vocab)
    state = TrainState.from_vocabs(cfg, node_vocab, summary_vocab)
    try:
        state.model.load_state_dict({k[len("param."):]: v for k, v in arrays.items() if k.startswith("param.")})
        state.optimizer.load_state_dict(arrays, meta["adam_t"])
    except (KeyError, ValueError) as exc:
        raise CorruptCheckpoint(f"checkpoint {path} does not match its config: {exc}") from exc
    state.step = meta["step"]
    state.best = meta.get("best", {})
    return state

"""Intermediate Node Prediction: can an MLP recover the nodes between two endpoints from their PEs alone?

Examples are downward paths ``a -> ... -> b`` with exactly ``k`` nodes strictly
between the endpoints. The probe sees ``concat(pe[a], pe[b])`` and predicts
the ``k`` intermediate node types with one softmax head per position.
Learnable schemes (csa, tree, triplet) are trained jointly with the probe;
sequential and laplacian encodings are fixed functions of the tree.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .ast_ingest import Ast, DatasetRecord, Vocabulary, build_vocab
from .autodiff import Tensor, concat, cross_entropy, gather_rows, no_grad, relu, reshape
from .errors import ConfigError, EmptyDataset
from .nn import Linear, Module
from .optim import AdamW
from .pe.baselines import TreePE, TripletPE, laplacian_pe, sequential_pe, stack_padded, tree_paths
from .pe.cse import CodeStructureEmbedder, CseConfig, RelationBatch
from .relations import P_MAX, compute_relations

log = logging.getLogger(__name__)

SCHEMES = ("csa", "sequential", "tree", "triplet", "laplacian")
K_VALUES = (1, 3, 5)


@dataclass
class InpExample:
    ast_index: int
    start: int
    end: int
    labels: list[int]  # node-type ids of the k intermediate nodes

    @property
    def k(self) -> int:
        return len(self.labels)


@dataclass
class InpDataset:
    asts: list[Ast]
    train: list[InpExample]
    test: list[InpExample]
    k: int
    scheme: str
    vocab: Vocabulary
    train_asts: list[int] = field(default_factory=list)
    test_asts: list[int] = field(default_factory=list)


@dataclass
class InpSettings:
    d_pe: int = 64
    hidden: int = 256
    epochs: int = 30
    lr: float = 1e-3
    asts_per_batch: int = 32
    cse_layers: int = 2
    cse_heads: int = 4


def extract_paths(ast: Ast, k: int) -> list[list[int]]:
    """Every ancestor-to-descendant chain with exactly ``k`` intermediate nodes, ordered by (start, end)."""
    if k < 0:
        raise ValueError("k must be non-negative")
    paths = []
    for node in ast.nodes:
        chain = [node.id]
        v = node.parent
        while v is not None and len(chain) < k + 2:
            chain.append(v)
            v = ast.nodes[v].parent
        if len(chain) == k + 2:
            paths.append(chain[::-1])
    paths.sort(key=lambda p: (p[0], p[-1]))
    return paths


def build_dataset(corpus: Sequence[DatasetRecord | Ast], k: int, pe_scheme: str = "csa", cap: int = 10,
                  seed: int = 0, vocab: Vocabulary | None = None) -> InpDataset:
    """Sample at most ``cap`` paths per tree and split trees (not examples) 8:2.

    The sampled examples depend only on ``seed``, so every scheme sees the same data.
    """
    if pe_scheme not in SCHEMES:
        raise ConfigError(f"unknown PE scheme {pe_scheme!r}")
    asts = [r.ast if isinstance(r, DatasetRecord) else r for r in corpus]
    if not asts:
        raise EmptyDataset("empty corpus")
    if vocab is None:
        vocab = build_vocab([DatasetRecord(a, []) for a in asts], "node_types", 10000)
    rng = np.random.default_rng([seed, k, 0])
    per_ast: dict[int, list[InpExample]] = {}
    for i, ast in enumerate(asts):
        paths = extract_paths(ast, k)
        if not paths:
            continue
        pick = sorted(rng.choice(len(paths), size=min(cap, len(paths)), replace=False))
        types = vocab.encode(ast.types)
        per_ast[i] = [InpExample(i, paths[j][0], paths[j][-1], [types[v] for v in paths[j][1:-1]]) for j in pick]
    if not per_ast:
        raise EmptyDataset(f"no tree contains a path with {k} intermediate nodes")
    order = np.array(sorted(per_ast))
    order = order[rng.permutation(len(order))]
    n_train = max(1, int(round(0.8 * len(order)))) if len(order) > 1 else 1
    train_ids, test_ids = sorted(order[:n_train].tolist()), sorted(order[n_train:].tolist())
    return InpDataset(
        asts, [e for i in train_ids for e in per_ast[i]], [e for i in test_ids for e in per_ast[i]],
        k, pe_scheme, vocab, train_ids, test_ids,
    )


# -- positional encoders -------------------------------------------------------

class PeEncoder(Module):
    """Produces padded PEs ``[B, N, d]`` for a group of trees."""

    trainable = False

    def __init__(self, d: int):
        self.d = d

    def __call__(self, asts: Sequence[Ast], rng=None) -> Tensor:
        raise NotImplementedError


class SequentialEncoder(PeEncoder):
    def __call__(self, asts, rng=None):
        n = max(len(a.nodes) for a in asts)
        return Tensor(np.broadcast_to(sequential_pe(n, self.d), (len(asts), n, self.d)).copy())


class LaplacianEncoder(PeEncoder):
    def __init__(self, d: int):
        super().__init__(d)
        self._cache: dict[int, np.ndarray] = {}

    def __call__(self, asts, rng=None):
        rows = []
        for a in asts:
            if id(a) not in self._cache:
                self._cache[id(a)] = laplacian_pe(a, self.d)
            rows.append(self._cache[id(a)])
        return Tensor(stack_padded(rows, max(len(a.nodes) for a in asts)))


class TreeEncoder(PeEncoder):
    trainable = True

    def __init__(self, d: int):
        super().__init__(d)
        degree = 8
        self.pe = TreePE(d, degree=degree, depth=max(1, d // degree))

    def __call__(self, asts, rng=None):
        n = max(len(a.nodes) for a in asts)
        paths = np.zeros((len(asts), n, self.pe.depth, self.pe.degree))
        for b, a in enumerate(asts):
            paths[b, : len(a.nodes)] = tree_paths(a, self.pe.degree, self.pe.depth)
        return self.pe.from_paths(paths)


class TripletEncoder(PeEncoder):
    trainable = True

    def __init__(self, d: int, rng, fit_asts: Sequence[Ast]):
        super().__init__(d)
        self.pe = TripletPE(rng, d, fit_asts)

    def __call__(self, asts, rng=None):
        n = max(len(a.nodes) for a in asts)
        ids = np.zeros((len(asts), n), dtype=np.int64)
        for b, a in enumerate(asts):
            ids[b, : len(a.nodes)] = self.pe.ids(a)
        return gather_rows(self.pe.table, ids)


class CsaEncoder(PeEncoder):
    trainable = True

    def __init__(self, d: int, rng, vocab: Vocabulary, layers: int, heads: int):
        super().__init__(d)
        self.vocab = vocab
        self.cse = CodeStructureEmbedder(rng, CseConfig(d_pe=d, layers=layers, heads=heads, dropout=0.0),
                                         len(vocab))
        self._rels: dict[int, object] = {}

    def __call__(self, asts, rng=None):
        rels = []
        for a in asts:
            if id(a) not in self._rels:
                self._rels[id(a)] = compute_relations(a, P_MAX)
            rels.append(self._rels[id(a)])
        rb = RelationBatch.from_relations(rels)
        n = rb.valid.shape[1]
        ids = np.zeros((len(asts), n), dtype=np.int64)
        for b, a in enumerate(asts):
            ids[b, : len(a.nodes)] = self.vocab.encode(a.types)
        return self.cse(ids, rb, rng)


def make_encoder(scheme: str, ds: InpDataset, settings: InpSettings, rng) -> PeEncoder:
    d = settings.d_pe
    if scheme == "csa":
        return CsaEncoder(d, rng, ds.vocab, settings.cse_layers, settings.cse_heads)
    if scheme == "sequential":
        return SequentialEncoder(d)
    if scheme == "tree":
        return TreeEncoder(d)
    if scheme == "triplet":
        return TripletEncoder(d, rng, [ds.asts[i] for i in ds.train_asts])
    if scheme == "laplacian":
        return LaplacianEncoder(d)
    raise ConfigError(f"unknown PE scheme {scheme!r}")


class Probe(Module):
    """Two hidden relu layers and ``k`` parallel softmax heads."""

    def __init__(self, rng, d_in: int, hidden: int, k: int, n_labels: int):
        self.l1 = Linear(rng, d_in, hidden)
        self.l2 = Linear(rng, hidden, hidden)
        self.head = Linear(rng, hidden, k * n_labels)
        self.k, self.n_labels = k, n_labels

    def __call__(self, x: Tensor) -> Tensor:
        h = relu(self.l2(relu(self.l1(x))))
        return reshape(self.head(h), (x.shape[0], self.k, self.n_labels))


def _endpoint_features(enc: PeEncoder, ds: InpDataset, ast_ids: Sequence[int], examples: Sequence[InpExample]):
    pe = enc([ds.asts[i] for i in ast_ids])
    b, n, d = pe.shape
    slot = {a: j for j, a in enumerate(ast_ids)}
    flat = reshape(pe, (b * n, d))
    a_idx = np.array([slot[e.ast_index] * n + e.start for e in examples])
    b_idx = np.array([slot[e.ast_index] * n + e.end for e in examples])
    return concat([gather_rows(flat, a_idx), gather_rows(flat, b_idx)], axis=-1)


def _group(examples: Sequence[InpExample]) -> dict[int, list[InpExample]]:
    out: dict[int, list[InpExample]] = {}
    for e in examples:
        out.setdefault(e.ast_index, []).append(e)
    return out


def probe_accuracy(pred: np.ndarray, labels: np.ndarray) -> tuple[float, float]:
    """(exact-sequence accuracy, per-position accuracy)."""
    hit = pred == labels
    return float(hit.all(axis=1).mean()), float(hit.mean())


def train_probe(ds: InpDataset, epochs: int | None = None, seed: int = 0,
                settings: InpSettings | None = None, train: bool = True) -> dict:
    """Train encoder and probe on ``ds.train``; report accuracies on ``ds.test``.

    ``train=False`` evaluates the freshly initialized probe (the null model).
    """
    settings = settings or InpSettings()
    epochs = settings.epochs if epochs is None else epochs
    if not ds.train or not ds.test:
        raise EmptyDataset("INP dataset needs both train and test examples")
    rng = np.random.default_rng([seed, ds.k, 1])
    enc = make_encoder(ds.scheme, ds, settings, rng)
    probe = Probe(rng, 2 * settings.d_pe, settings.hidden, ds.k, len(ds.vocab))
    params = probe.named_parameters("probe.")
    if enc.trainable:
        params.update(enc.named_parameters("pe."))
    opt = AdamW(params, lr=settings.lr)
    by_ast = _group(ds.train)
    ast_ids = sorted(by_ast)
    shuffle = np.random.default_rng([seed, ds.k, 2])
    for _ in range(epochs if train else 0):
        order = [ast_ids[i] for i in shuffle.permutation(len(ast_ids))]
        for s in range(0, len(order), settings.asts_per_batch):
            group = order[s : s + settings.asts_per_batch]
            examples = [e for a in group for e in by_ast[a]]
            opt.zero_grad()
            x = _endpoint_features(enc, ds, group, examples)
            labels = np.array([e.labels for e in examples])
            loss = cross_entropy(probe(x), labels, pad_id=None)
            loss.backward()
            opt.step()
    with no_grad():
        test_groups = _group(ds.test)
        preds, labels = [], []
        tids = sorted(test_groups)
        for s in range(0, len(tids), settings.asts_per_batch):
            group = tids[s : s + settings.asts_per_batch]
            examples = [e for a in group for e in test_groups[a]]
            logits = probe(_endpoint_features(enc, ds, group, examples)).data
            preds.append(logits.argmax(axis=-1))
            labels.append(np.array([e.labels for e in examples]))
    exact, per_pos = probe_accuracy(np.concatenate(preds), np.concatenate(labels))
    return {"accuracy": exact, "position_accuracy": per_pos, "n_train": len(ds.train), "n_test": len(ds.test)}


def run_benchmark(corpus: Sequence[DatasetRecord], schemes: Sequence[str], ks: Sequence[int], runs: int = 10,
                  seed: int = 0, settings: InpSettings | None = None) -> list[dict]:
    """Mean and std of exact-sequence accuracy over ``runs`` seeded repetitions per (scheme, k)."""
    rows = []
    for k in ks:
        if k not in K_VALUES:
            raise ConfigError(f"k must be one of {K_VALUES}, got {k}")
        for scheme in schemes:
            accs, pos = [], []
            for r in range(runs):
                ds = build_dataset(corpus, k, scheme, seed=seed + r)
                res = train_probe(ds, seed=seed + r, settings=settings)
                accs.append(res["accuracy"])
                pos.append(res["position_accuracy"])
                log.info("inp scheme=%s k=%d run=%d acc=%.4f", scheme, k, r, res["accuracy"])
            rows.append({
                "scheme": scheme, "k": k, "mean_acc": float(np.mean(accs)), "std": float(np.std(accs)),
                "runs": runs, "mean_position_acc": float(np.mean(pos)), "accs": accs,
            })
    return rows


RESULT_FIELDS = ["scheme", "k", "mean_acc", "std", "runs", "mean_position_acc"]


def write_results_csv(rows: Sequence[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=RESULT_FIELDS, extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow(r)

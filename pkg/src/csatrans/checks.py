"""The finite-difference suite behind ``csatrans gradcheck`` and the test-suite.

Each case builds fresh float64 inputs from a seeded generator and returns a
scalar-valued function; non-scalar ops are reduced against a fixed random
weighting so every output element contributes to the check.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, gradcheck

TOL = 1e-4
Case = Callable[[np.random.Generator], tuple[Callable[..., Tensor], list[Tensor]]]


def _t(rng, *shape, scale=1.0):
    return Tensor(rng.standard_normal(shape) * scale, requires_grad=True)


def _weighted(rng, out_shape):
    w = rng.standard_normal(out_shape)
    return lambda y: ad.sum_(ad.mul(y, Tensor(w)))


def _unary(op, shape=(3, 4)):
    def case(rng):
        x = _t(rng, *shape)
        red = _weighted(rng, op(Tensor(x.data)).shape)
        return (lambda a: red(op(a))), [x]
    return case


def _binary(op, sa, sb):
    def case(rng):
        a, b = _t(rng, *sa), _t(rng, *sb)
        red = _weighted(rng, op(Tensor(a.data), Tensor(b.data)).shape)
        return (lambda x, y: red(op(x, y))), [a, b]
    return case


def _positive_gap(rng, *shape):
    # keep relu inputs away from the kink so central differences stay exact
    x = rng.standard_normal(shape)
    return Tensor(np.sign(x) * (np.abs(x) + 0.1), requires_grad=True)


def _relu_case(rng):
    x = _positive_gap(rng, 3, 4)
    red = _weighted(rng, x.shape)
    return (lambda a: red(ad.relu(a))), [x]


def _mask_fill_case(rng):
    mask = rng.random((3, 4)) < 0.4
    return _unary(lambda a: ad.mask_fill(a, mask, 0.0))(rng)


def _getitem_case(rng):
    idx = np.array([0, 2, 2, 1])
    return _unary(lambda a: ad.getitem(a, (idx, slice(1, 3))))(rng)


def _gather_case(rng):
    idx = rng.integers(0, 5, size=(2, 6))
    return _unary(lambda t: ad.gather_rows(t, idx), (5, 3))(rng)


def _take_case(rng):
    idx = rng.integers(0, 7, size=(2, 3, 4))
    return _unary(lambda t: ad.take_along_last(t, idx), (2, 3, 7))(rng)


def _masked_softmax_case(rng):
    mask = rng.random((2, 4, 5)) < 0.6
    mask[:, :, 0] = True
    return _unary(lambda a: ad.softmax(a, mask), (2, 4, 5))(rng)


def _ce_case(rng):
    x = _t(rng, 2, 5, 6)
    tgt = rng.integers(0, 6, size=(2, 5))
    return (lambda a: ad.cross_entropy(a, tgt, pad_id=0)), [x]


def _layer_norm_case(rng):
    x, g, b = _t(rng, 3, 6), _t(rng, 6), _t(rng, 6)
    red = _weighted(rng, x.shape)
    return (lambda a, gg, bb: red(ad.layer_norm(a, gg, bb))), [x, g, b]


def _dropout_case(rng):
    seed = int(rng.integers(1 << 30))
    return _unary(lambda a: ad.dropout(a, 0.3, np.random.default_rng(seed), True))(rng)


def _ste_case(rng):
    s, p = _t(rng, 2, 4, 4), Tensor(rng.random((2, 4, 4)), requires_grad=True)
    mask = rng.random((2, 4, 4)) < 0.5
    red = _weighted(rng, s.shape)
    return (lambda a, q: red(ad.ste_mask(a, q, mask, straight_through=False))), [s, p]


def _link_probability_case(rng):
    from .sbm import link_probability

    q, k, c = _t(rng, 2, 5, 3), _t(rng, 2, 5, 3), _t(rng, 2, 4, 3)
    red = _weighted(rng, (2, 5, 5))
    return (lambda a, b, cc: red(link_probability(a, b, cc).link_prob)), [q, k, c]


def _cse_layer_case(rng):
    from .ast_ingest import Ast
    from .pe.cse import CseConfig, CseLayer, RelationBatch
    from .relations import compute_relations

    parents = [None] + [int(rng.integers(0, i)) for i in range(1, 6)]
    ast = Ast.from_parents(["t"] * 6, parents)
    rb = RelationBatch.from_relations([compute_relations(ast, 4)])
    layer = CseLayer(rng, CseConfig(d_pe=8, layers=1, heads=2, p_max=4, d_ff=16, dropout=0.0))
    x = _t(rng, 1, 6, 8)
    red = _weighted(rng, x.shape)
    params = [layer.q.weight, layer.rel_parent, layer.rel_sibling, layer.k_rel.weight, layer.q_rel.weight]
    return (lambda a, *_: red(layer(a, rb))), [x, *params]


def _frozen_encoder_case(rng):
    from .model import EncoderLayer, ModelConfig

    cfg = ModelConfig(d_pe=4, d_emb=4, d_dec=8, d_ff=16, heads=2, k_clusters=3, dropout=0.0)
    layer = EncoderLayer(rng, cfg)
    n = 6
    frozen = rng.random((1, cfg.heads, n, n)) < 0.5
    layer.attn.frozen_mask = frozen
    layer.attn.straight_through = False
    valid = np.ones((1, n), dtype=bool)
    x = _t(rng, 1, n, cfg.d_model)
    red = _weighted(rng, x.shape)
    params = [layer.attn.q.weight, layer.attn.v.weight, layer.attn.clusters, layer.ffn.fc1.weight, layer.norm1.weight]
    return (lambda a, *_: red(layer(a, valid)[0])), [x, *params]


CASES: dict[str, Case] = {
    "add": _binary(ad.add, (3, 4), (4,)),
    "sub": _binary(ad.sub, (3, 4), (3, 1)),
    "mul": _binary(ad.mul, (2, 3, 4), (3, 4)),
    "scale": _unary(lambda a: ad.scale(a, -1.7)),
    "relu": _relu_case,
    "sigmoid": _unary(ad.sigmoid),
    "exp": _unary(ad.exp),
    "mask_fill": _mask_fill_case,
    "sum": _unary(lambda a: ad.sum_(a, axis=0, keepdims=True)),
    "mean": _unary(lambda a: ad.mean(a, axis=-1)),
    "reshape": _unary(lambda a: ad.reshape(a, (2, 6))),
    "transpose": _unary(lambda a: ad.transpose(a, (2, 0, 1)), (2, 3, 4)),
    "swapaxes": _unary(lambda a: ad.swapaxes(a, 0, 2), (2, 3, 4)),
    "concat": _binary(lambda a, b: ad.concat([a, b], axis=-1), (3, 2), (3, 4)),
    "getitem": _getitem_case,
    "matmul": _binary(ad.matmul, (2, 3, 4), (4, 5)),
    "gather_rows": _gather_case,
    "take_along_last": _take_case,
    "softmax": _unary(ad.softmax, (2, 5)),
    "softmax_masked": _masked_softmax_case,
    "log_softmax": _unary(ad.log_softmax, (2, 5)),
    "cross_entropy": _ce_case,
    "layer_norm": _layer_norm_case,
    "dropout": _dropout_case,
    "ste_mask": _ste_case,
    "link_probability": _link_probability_case,
    "cse_layer": _cse_layer_case,
    "frozen_mask_encoder": _frozen_encoder_case,
}


def _buggy_sigmoid(a: Tensor) -> Tensor:
    """Negative control: backward forgets the ``(1 - s)`` factor."""
    s = 1.0 / (1.0 + np.exp(-a.data))
    return Tensor._make(s, (a,), lambda g: (g * s,), "buggy_sigmoid")


INJECTED_BUG: dict[str, Case] = {"injected_bug": _unary(_buggy_sigmoid)}


def run_suite(seeds=range(5), cases: dict[str, Case] | None = None, tol: float = TOL,
              eps: float = 1e-5) -> list[dict]:
    """One row per case: worst relative error over ``seeds`` and pass/fail."""
    rows = []
    for name, case in (CASES if cases is None else cases).items():
        worst = 0.0
        for seed in seeds:
            f, inputs = case(np.random.default_rng([seed, 17]))
            worst = max(worst, gradcheck(f, inputs, eps))
        rows.append({"op": name, "max_rel_err": worst, "seeds": len(list(seeds)), "passed": worst < tol})
    return rows

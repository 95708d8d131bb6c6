import math

import numpy as np
import pytest

from csatrans.autodiff import Tensor, mask_fill, matmul, mul, no_grad, numeric_grad, softmax, sum_, swapaxes
from csatrans.errors import EmptyMask, ShapeError
from csatrans.relations import compute_relations
from csatrans.sbm import (
    SbmAttention,
    force_diagonal,
    link_probability,
    mask_relationship_breakdown,
    masked_attention,
    sample_mask,
    sparsity_penalty,
)

from conftest import example_tree


def test_link_probability_invariants(rng):
    for _ in range(50):
        b = link_probability(Tensor(rng.normal(size=(2, 6, 4)) * 3),
                             Tensor(rng.normal(size=(2, 6, 4)) * 3), Tensor(rng.normal(size=(2, 5, 4))))
        p = b.link_prob.data
        assert p.shape == (2, 6, 6)
        assert (p >= 0).all() and (p <= 1).all()
        np.testing.assert_allclose(b.assign_q.data.sum(-1), 1.0, atol=1e-12)
        np.testing.assert_array_equal(b.cluster_link.data, np.swapaxes(b.cluster_link.data, -1, -2))


def test_link_probability_extremes():
    # huge cluster norms give hard assignments and saturated links
    clusters = Tensor(np.array([[1.0, 0.0], [-1.0, 0.0]]) * 50)
    q = Tensor(np.tile([1.0, 0.0], (3, 1)))
    k = Tensor(np.tile([-1.0, 0.0], (3, 1)))
    np.testing.assert_allclose(link_probability(q, q, clusters).link_prob.data, 1.0, atol=1e-12)
    # opposed clusters have a vanishing link
    np.testing.assert_allclose(link_probability(q, k, clusters).link_prob.data, 0.0, atol=1e-12)


def test_link_probability_shape_error():
    with pytest.raises(ShapeError):
        link_probability(Tensor(np.ones((3, 4))), Tensor(np.ones((3, 4))), Tensor(np.ones((2, 5))))


def test_sample_mask_modes():
    p = np.array([[0.2, 0.5], [0.49, 0.9]])
    np.testing.assert_array_equal(sample_mask(p, None, "eval"), [[True, True], [False, True]])
    np.testing.assert_array_equal(sample_mask(np.zeros((3, 3)), None, "eval"), np.eye(3, dtype=bool))
    assert sample_mask(np.ones((3, 3)), np.random.default_rng(0)).all()
    with pytest.raises(ValueError):
        sample_mask(p, None, "train")


def test_sample_mask_is_seeded():
    p = np.random.default_rng(1).uniform(size=(5, 8, 8))
    a = sample_mask(p, np.random.default_rng([3, 2, 0]))
    b = sample_mask(p, np.random.default_rng([3, 2, 0]))
    np.testing.assert_array_equal(a, b)
    # empirical rate tracks the probabilities off the diagonal
    big = np.full((200, 20, 20), 0.3)
    m = sample_mask(big, np.random.default_rng(0))
    off = ~np.eye(20, dtype=bool)
    assert abs(m[:, off].mean() - 0.3) < 0.01


def test_all_true_mask_equals_dense_attention(rng):
    q, k, v = (Tensor(rng.normal(size=(2, 5, 4))) for _ in range(3))
    out = masked_attention(q, k, v, np.ones((2, 5, 5), dtype=bool)).data
    w = softmax(Tensor(q.data @ np.swapaxes(k.data, -1, -2) / 2.0)).data
    np.testing.assert_allclose(out, w @ v.data, atol=1e-12)


def test_identity_mask_returns_values(rng):
    q, k, v = (Tensor(rng.normal(size=(5, 4))) for _ in range(3))
    out = masked_attention(q, k, v, np.eye(5, dtype=bool), Tensor(rng.uniform(size=(5, 5)))).data
    np.testing.assert_allclose(out, v.data, atol=1e-12)


def _ste_instance(rng, n=6, d=4):
    q = Tensor(rng.normal(size=(n, d)), requires_grad=True)
    k = Tensor(rng.normal(size=(n, d)), requires_grad=True)
    v = Tensor(rng.normal(size=(n, d)))
    mask = force_diagonal(rng.uniform(size=(n, n)) < 0.5)
    w = rng.normal(size=(n, d))
    return q, k, v, mask, w


def test_ste_contract_against_frozen_surrogate(rng):
    """The probabilities get the gradient a differentiable float mask would get."""
    q, k, v, mask, w = _ste_instance(rng)
    probs = Tensor(rng.uniform(size=mask.shape), requires_grad=True)
    sum_(masked_attention(q, k, v, mask, probs) * Tensor(w)).backward()

    m_float = Tensor(mask.astype(float), requires_grad=True)

    def surrogate(mf):
        scores = matmul(Tensor(q.data), swapaxes(Tensor(k.data), -1, -2)) / math.sqrt(q.shape[-1])
        logits = mask_fill(mul(scores, mf), ~mask)
        return sum_(matmul(softmax(logits, mask), v) * Tensor(w))

    surrogate(m_float).backward()
    np.testing.assert_allclose(probs.grad, m_float.grad, atol=1e-12)
    assert not probs.grad[~mask].any()
    # and the surrogate itself agrees with finite differences
    (num,) = numeric_grad(surrogate, [Tensor(mask.astype(float))])
    np.testing.assert_allclose(np.where(mask, num, 0), m_float.grad, atol=1e-8)


def test_frozen_path_gives_probabilities_no_gradient(rng):
    q, k, v, mask, w = _ste_instance(rng)
    probs = Tensor(rng.uniform(size=mask.shape), requires_grad=True)
    sum_(masked_attention(q, k, v, mask, probs, straight_through=False) * Tensor(w)).backward()
    assert probs.grad is None
    assert q.grad is not None


def test_sparsity_penalty():
    p = Tensor(np.array([[0.2, 0.4], [0.6, 0.8]]))
    assert sparsity_penalty(p, 0.01).item() == pytest.approx(0.005)
    valid = np.array([[True, False], [False, True]])
    assert sparsity_penalty(p, 1.0, valid).item() == pytest.approx(0.5)
    assert sparsity_penalty(p, 0.0).item() == 0.0


def test_breakdown_on_example_tree():
    rel = compute_relations(example_tree())
    out = mask_relationship_breakdown(np.ones((4, 4), dtype=bool), rel)
    assert out["pairs"] == 12
    # ordered pairs: 0-1, 0-2, 0-3, 1-2 are ancestral; 1-3 siblings; 2-3 unrelated
    assert out["parent_child_pct"] == pytest.approx(8 / 12)
    assert out["sibling_pct"] == pytest.approx(2 / 12)
    assert out["neither_pct"] == pytest.approx(2 / 12)
    for key in ("parent_child_pct", "sibling_pct", "neither_pct"):
        assert 0.0 <= out[key] <= 1.0


def test_breakdown_empty_mask():
    with pytest.raises(EmptyMask):
        mask_relationship_breakdown(np.eye(4, dtype=bool), compute_relations(example_tree()))


def test_sbm_attention_modes(rng):
    x = Tensor(rng.normal(size=(2, 5, 8)))
    valid = np.array([[True] * 5, [True] * 3 + [False] * 2])
    sbm = SbmAttention(rng, 8, 2, k_clusters=3).eval()
    with no_grad():
        out, p = sbm(x, valid)
    assert out.shape == (2, 5, 8) and p.shape == (2, 2, 5, 5)
    mask = sbm.last["mask"]
    assert mask[:, :, np.arange(5), np.arange(5)].all()
    assert not mask[1, :, :3, 3:].any()
    vanilla = SbmAttention(rng, 8, 2, mode="vanilla")
    out, p = vanilla(x, valid)
    assert p is None and vanilla.clusters is None
    with pytest.raises(ValueError):
        SbmAttention(rng, 8, 2, mode="dense")

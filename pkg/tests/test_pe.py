import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from csatrans.ast_ingest import Ast
from csatrans.autodiff import no_grad
from csatrans.errors import ConfigError, ConvergenceError, OddDim
from csatrans.pe import (
    CodeStructureEmbedder,
    CseConfig,
    TreePE,
    TripletPE,
    cse_forward,
    jacobi_eigh,
    laplacian_pe,
    normalized_laplacian,
    sequential_pe,
    tree_paths,
    triplets,
)
from csatrans.relations import compute_relations

from conftest import random_tree


def _sym(rng, n):
    a = rng.normal(size=(n, n))
    return (a + a.T) / 2


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 30), st.integers(0, 2**32 - 1))
def test_jacobi_matches_numpy(n, seed):
    a = _sym(np.random.default_rng(seed), n)
    w, v = jacobi_eigh(a)
    np.testing.assert_allclose(w, np.linalg.eigvalsh(a), atol=1e-8)
    np.testing.assert_allclose(v.T @ v, np.eye(n), atol=1e-8)
    np.testing.assert_allclose(a @ v, v * w, atol=1e-8)


def test_jacobi_reports_non_convergence():
    with pytest.raises(ConvergenceError):
        jacobi_eigh(_sym(np.random.default_rng(0), 12), max_sweeps=1)


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 60), st.integers(0, 2**32 - 1))
def test_laplacian_decomposition(n, seed):
    lap = normalized_laplacian(random_tree(np.random.default_rng(seed), n))
    w, u = jacobi_eigh(lap)
    np.testing.assert_allclose(u @ np.diag(w) @ u.T, lap, atol=1e-6)
    np.testing.assert_allclose(w, np.linalg.eigh(lap)[0], atol=1e-8)
    assert w.min() > -1e-9 and w.max() < 2 + 1e-9


def test_path_of_three_spectrum():
    path = Ast.from_parents(["a", "b", "c"], [None, 0, 1])
    w, _ = jacobi_eigh(normalized_laplacian(path))
    np.testing.assert_allclose(w, [0.0, 1.0, 2.0], atol=1e-10)


def test_laplacian_pe_shapes_and_columns():
    ast = random_tree(np.random.default_rng(5), 20)
    pe = laplacian_pe(ast, 8)
    assert pe.shape == (20, 8)
    np.testing.assert_allclose(pe.T @ pe, np.eye(8), atol=1e-8)
    # the first clearly nonzero entry of each column is positive
    for col in pe.T:
        assert col[np.flatnonzero(np.abs(col) > 1e-12)[0]] > 0


def test_laplacian_pe_small_trees_pad_with_zeros():
    assert not laplacian_pe(Ast.from_parents(["m"], [None]), 4).any()
    pe = laplacian_pe(Ast.from_parents(["a", "b", "c"], [None, 0, 1]), 4)
    assert not pe[:, 2:].any() and pe[:, :2].any()


def test_sequential_pe():
    pe = sequential_pe(4, 6)
    np.testing.assert_allclose(pe[0], [0, 1, 0, 1, 0, 1])
    assert pe[1, 0] == pytest.approx(np.sin(1.0))
    assert pe[1, 1] == pytest.approx(np.cos(1.0))
    with pytest.raises(OddDim):
        sequential_pe(4, 5)


def test_tree_paths():
    ast = Ast.from_parents(["r", "a", "b", "c"], [None, 0, 1, 1])
    paths = tree_paths(ast, degree=4, depth=3)
    assert not paths[0].any()
    assert paths[1, 0, 0] == 1 and paths[1].sum() == 1
    # siblings share every level above their own
    np.testing.assert_array_equal(paths[2, 1:], paths[3, 1:])
    assert paths[2, 0, 0] == 1 and paths[3, 0, 1] == 1


def test_tree_pe_clamps_and_pads():
    star = Ast.from_parents(["r"] + ["x"] * 6, [None] + [0] * 6)
    pe = TreePE(d_pe=10, degree=3, depth=2)(star).data
    assert pe.shape == (7, 10)
    np.testing.assert_array_equal(pe[5], pe[6])  # child indices 4, 5 clamp to the last slot
    assert not pe[:, 6:].any()


def test_triplets_and_unseen_fallback():
    ast = Ast.from_parents(["r", "a", "b", "c"], [None, 0, 0, 1])
    assert triplets(ast) == [(0, 0, 0), (1, 0, 0), (2, 0, 0), (1, 0, 1)]
    pe = TripletPE(np.random.default_rng(0), 8, [ast])
    deep = Ast.from_parents(["r", "a", "b", "c", "d"], [None, 0, 1, 2, 3])
    ids = pe.ids(deep)
    assert ids[0] == pe.index[(0, 0, 0)]
    assert ids[-1] == 0
    np.testing.assert_array_equal(pe(deep).data[-1], pe.table.data[0])


def _cse(d=16, layers=2, heads=4, seed=0, vocab=12):
    cfg = CseConfig(d_pe=d, layers=layers, heads=heads, dropout=0.0)
    return cfg, CodeStructureEmbedder(np.random.default_rng(seed), cfg, vocab).eval()


@pytest.mark.parametrize("n", [2, 9, 40])
def test_cse_permutation_equivariance(n):
    cfg, emb = _cse()
    rng = np.random.default_rng(n)
    ast = random_tree(rng, n)
    ids = rng.integers(4, 12, size=n)
    rel = compute_relations(ast)
    with no_grad():
        base = cse_forward(ids, rel, cfg, emb).data
        for _ in range(5):
            perm = rng.permutation(n)
            out = cse_forward(ids[perm], rel.permute(perm), cfg, emb).data
            np.testing.assert_allclose(out, base[perm], atol=1e-10)


def test_cse_single_node_and_type_sensitivity():
    cfg, emb = _cse()
    one = compute_relations(Ast.from_parents(["m"], [None]))
    with no_grad():
        a = cse_forward([4], one, cfg, emb).data
        b = cse_forward([5], one, cfg, emb).data
    assert a.shape == (1, 16) and np.isfinite(a).all()
    assert not np.allclose(a, b)


def test_cse_distinguishes_structure():
    cfg, emb = _cse()
    chain = compute_relations(Ast.from_parents(["a"] * 3, [None, 0, 1]))
    star = compute_relations(Ast.from_parents(["a"] * 3, [None, 0, 0]))
    with no_grad():
        c = cse_forward([4, 5, 6], chain, cfg, emb).data
        s = cse_forward([4, 5, 6], star, cfg, emb).data
    # identical types would make every value vector equal and hide structure
    assert np.abs(c - s).max() > 1e-6


def test_cse_footprint_is_size_invariant():
    cfg, emb = _cse(d=32, heads=8)
    expected = 2 * (2 * cfg.p_max + 1) * cfg.d_head * cfg.heads
    assert emb.relative_parameter_count() == [expected, expected]
    before = emb.num_parameters()
    rng = np.random.default_rng(0)
    for n in (10, 50, 150):
        with no_grad():
            cse_forward(rng.integers(0, 12, n), compute_relations(random_tree(rng, n)), cfg, emb)
        assert emb.num_parameters() == before


@pytest.mark.parametrize("kw", [
    dict(d_pe=10, heads=4),
    dict(d_pe=16, heads=2, head_assignment=("sibling", "sibling")),
    dict(d_pe=16, heads=2, head_assignment=("parent_child",)),
    dict(d_pe=16, heads=2, p_max=0),
])
def test_cse_config_errors(kw):
    with pytest.raises(ConfigError):
        CseConfig(**kw)


def test_cse_forward_rejects_mismatched_params():
    _, emb = _cse()
    with pytest.raises(ConfigError):
        cse_forward([4], compute_relations(Ast.from_parents(["m"], [None])), CseConfig(d_pe=32, heads=4), emb)


def test_cse_fuzz_stays_finite():
    cfg, emb = _cse(d=8, layers=1, heads=2)
    rng = np.random.default_rng(99)
    with no_grad():
        for _ in range(500):
            n = int(rng.integers(1, 60))
            out = cse_forward(rng.integers(0, 12, n), compute_relations(random_tree(rng, n)), cfg, emb).data
            assert out.shape == (n, 8) and np.isfinite(out).all()

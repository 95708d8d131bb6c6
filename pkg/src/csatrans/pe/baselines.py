"""Baseline positional encodings for ASTs: sequential, tree, triplet and Laplacian."""

from __future__ import annotations

from collections import Counter
from typing import Iterable, Sequence

import numpy as np

from ..ast_ingest import Ast
from ..autodiff import Tensor, gather_rows, matmul, mul, reshape
from ..errors import OddDim
from ..nn import Module, normal
from .jacobi import jacobi_eigh


def sequential_pe(n: int, d: int) -> np.ndarray:
    """Sinusoidal encoding of positions 0..n-1 (pre-order index for trees)."""
    if d % 2:
        raise OddDim(f"sequential PE needs an even dimension, got {d}")
    pos = np.arange(n, dtype=np.float64)[:, None]
    freq = 10000.0 ** (2.0 * np.arange(d // 2) / d)
    out = np.empty((n, d))
    out[:, 0::2] = np.sin(pos / freq)
    out[:, 1::2] = np.cos(pos / freq)
    return out


def tree_paths(ast: Ast, degree: int = 32, depth: int = 16) -> np.ndarray:
    """One-hot child indices walking up to the root: ``[N, depth, degree]``.

    Level 0 holds the node's own child index, level 1 its parent's, and so on;
    the root contributes nothing. Paths longer than ``depth`` keep the levels
    nearest the node; child indices are clamped to ``degree - 1``.
    """
    n = len(ast.nodes)
    out = np.zeros((n, depth, degree))
    for node in ast.nodes:
        v, level = node.id, 0
        while ast.nodes[v].parent is not None and level < depth:
            out[node.id, level, min(ast.nodes[v].child_index, degree - 1)] = 1.0
            v = ast.nodes[v].parent
            level += 1
    return out


class TreePE(Module):
    """Stacked child-index one-hots with one learned weight per tree level."""

    def __init__(self, d_pe: int, degree: int = 32, depth: int = 16):
        self.level_weight = Tensor(np.ones((depth, 1)), requires_grad=True)
        self.d_pe, self.degree, self.depth = d_pe, degree, depth

    def __call__(self, ast: Ast) -> Tensor:
        return self.from_paths(tree_paths(ast, self.degree, self.depth))

    def from_paths(self, paths: np.ndarray) -> Tensor:
        """``paths``: ``[..., depth, degree]`` one-hots -> ``[..., d_pe]``."""
        lead = paths.shape[:-2]
        width = self.depth * self.degree
        flat = reshape(mul(Tensor(paths), self.level_weight), lead + (width,))
        if width == self.d_pe:
            return flat
        # zero-pad or truncate as a fixed selection matrix
        sel = np.zeros((width, self.d_pe))
        k = min(width, self.d_pe)
        sel[np.arange(k), np.arange(k)] = 1.0
        return matmul(flat, Tensor(sel))


def triplets(ast: Ast) -> list[tuple[int, int, int]]:
    """(depth, parent's position within its level, own position within its level)."""
    depth = ast.depth()
    seen: Counter[int] = Counter()
    width = [0] * len(ast.nodes)
    for node in ast.nodes:  # pre-order visits each level left to right
        width[node.id] = seen[depth[node.id]]
        seen[depth[node.id]] += 1
    out = []
    for node in ast.nodes:
        pw = 0 if node.parent is None else width[node.parent]
        out.append((depth[node.id], pw, width[node.id]))
    return out


class TripletPE(Module):
    """One learnable row per triplet seen during fitting; row 0 is the unseen fallback."""

    def __init__(self, rng: np.random.Generator, d_pe: int, asts: Iterable[Ast]):
        index: dict[tuple[int, int, int], int] = {}
        for ast in asts:
            for t in triplets(ast):
                index.setdefault(t, len(index) + 1)
        self.index = index
        self.table = normal(rng, len(index) + 1, d_pe)
        self.d_pe = d_pe

    def ids(self, ast: Ast) -> np.ndarray:
        return np.array([self.index.get(t, 0) for t in triplets(ast)], dtype=np.int64)

    def __call__(self, ast: Ast) -> Tensor:
        return gather_rows(self.table, self.ids(ast))


def normalized_laplacian(ast: Ast) -> np.ndarray:
    n = len(ast.nodes)
    adj = np.zeros((n, n))
    for node in ast.nodes[1:]:
        adj[node.id, node.parent] = adj[node.parent, node.id] = 1.0
    deg = adj.sum(axis=1)
    inv_sqrt = np.where(deg > 0, 1.0 / np.sqrt(np.where(deg > 0, deg, 1.0)), 0.0)
    return np.eye(n) - inv_sqrt[:, None] * adj * inv_sqrt[None, :]


def canonical_signs(vectors: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Flip each column so its first clearly nonzero component is positive."""
    out = vectors.copy()
    for j in range(out.shape[1]):
        nz = np.flatnonzero(np.abs(out[:, j]) > tol)
        if len(nz) and out[nz[0], j] < 0:
            out[:, j] = -out[:, j]
    return out


def laplacian_pe(ast: Ast, k_eig: int, zero_tol: float = 1e-8) -> np.ndarray:
    """Eigenvectors of the ``k_eig`` smallest nonzero Laplacian eigenvalues, ``[N, k_eig]``."""
    n = len(ast.nodes)
    out = np.zeros((n, k_eig))
    if n < 2:
        return out
    w, u = jacobi_eigh(normalized_laplacian(ast))
    keep = np.flatnonzero(w > zero_tol)[:k_eig]
    out[:, : len(keep)] = canonical_signs(u[:, keep])
    return out


def stack_padded(rows: Sequence[np.ndarray], n_max: int) -> np.ndarray:
    d = rows[0].shape[-1]
    out = np.zeros((len(rows), n_max, d))
    for b, r in enumerate(rows):
        out[b, : len(r)] = r
    return out

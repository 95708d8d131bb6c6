"""Signed parent-child and sibling distance matrices over an AST."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .ast_ingest import Ast
from .errors import RangeError

P_MAX = 150
KINDS = ("parent_child", "sibling")


@dataclass
class RelationMatrices:
    parent_child: np.ndarray
    sibling: np.ndarray
    p_max: int = P_MAX

    def __len__(self) -> int:
        return self.parent_child.shape[0]

    def of(self, kind: str) -> np.ndarray:
        if kind == "parent_child":
            return self.parent_child
        if kind == "sibling":
            return self.sibling
        raise ValueError(f"unknown relation kind {kind!r}")

    def permute(self, perm: np.ndarray) -> "RelationMatrices":
        """Relabel nodes so new node ``i`` is old node ``perm[i]``."""
        ix = np.ix_(perm, perm)
        return RelationMatrices(self.parent_child[ix], self.sibling[ix], self.p_max)


def compute_parent_child(ast: Ast) -> np.ndarray:
    """P[i, j] = +d if i is an ancestor of j at distance d, -d if a descendant."""
    n = len(ast.nodes)
    out = np.zeros((n, n), dtype=np.int64)
    # pre-order ids: every ancestor row is complete before its descendants
    for node in ast.nodes[1:]:
        v, p = node.id, node.parent
        anc = out[:, p] > 0
        out[anc, v] = out[anc, p] + 1
        out[p, v] = 1
    return out - out.T


def compute_sibling(ast: Ast) -> np.ndarray:
    """S[i, j] = child_index(j) - child_index(i) for siblings, 0 elsewhere."""
    n = len(ast.nodes)
    out = np.zeros((n, n), dtype=np.int64)
    for node in ast.nodes:
        kids = np.asarray(node.children, dtype=np.int64)
        if len(kids) > 1:
            pos = np.arange(len(kids))
            out[np.ix_(kids, kids)] = pos[None, :] - pos[:, None]
    return out


def clip(matrix: np.ndarray, p_max: int) -> np.ndarray:
    return np.clip(matrix, -p_max, p_max)


def to_indices(matrix: np.ndarray, p_max: int) -> np.ndarray:
    """Shift signed distances into ``[0, 2*p_max]``; ``p_max`` is the zero slot."""
    matrix = np.asarray(matrix)
    if matrix.size and np.abs(matrix).max() > p_max:
        raise RangeError(f"distance exceeds p_max={p_max}; clip first")
    return (matrix + p_max).astype(np.int64)


def compute_relations(ast: Ast, p_max: int = P_MAX) -> RelationMatrices:
    return RelationMatrices(
        clip(compute_parent_child(ast), p_max), clip(compute_sibling(ast), p_max), p_max
    )


def relation_mask(rel: RelationMatrices, kind: str) -> np.ndarray:
    """True where the relation is nonzero, plus the diagonal."""
    mask = rel.of(kind) != 0
    np.fill_diagonal(mask, True)
    return mask


def write_csv(rel: RelationMatrices, path) -> None:
    n = len(rel)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["i", "j", "p", "s"])
        for i in range(n):
            for j in range(n):
                w.writerow([i, j, int(rel.parent_child[i, j]), int(rel.sibling[i, j])])

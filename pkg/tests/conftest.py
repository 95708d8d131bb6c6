from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from csatrans.ast_ingest import Ast, read_jsonl
from csatrans.model import ModelConfig

# "PASS/FAIL criterion N" lines, echoed again in the terminal summary
ACCEPTANCE: list[str] = []

ROOT = Path(__file__).resolve().parents[1]
TOY_CORPUS = ROOT / "data" / "toy" / "corpus.jsonl"
TOY_SOURCES = ROOT / "data" / "toy" / "sources.jsonl"

TYPES = ["module", "block", "call", "identifier", "return_statement", "if_statement", "expr", "string"]


def random_tree(rng: np.random.Generator, n: int, types=TYPES) -> Ast:
    """Random recursive tree; ids are re-assigned in pre-order by ``from_parents``."""
    parents = [None] + [int(rng.integers(0, i)) for i in range(1, n)]
    names = [str(types[int(rng.integers(len(types)))]) for _ in range(n)]
    return Ast.from_parents(names, parents)


def example_tree() -> Ast:
    """Pre-order ids: 0 root with children 1 and 3; node 2 is a child of 1."""
    return Ast.from_parents(["module", "a", "c", "b"], [None, 0, 1, 0])


# -- brute-force oracles --------------------------------------------------------

def oracle_parent_child(ast: Ast) -> np.ndarray:
    n = len(ast.nodes)
    out = np.zeros((n, n), dtype=np.int64)
    for j in range(n):
        d, v = 0, j
        while ast.nodes[v].parent is not None:
            v = ast.nodes[v].parent
            d += 1
            out[v, j] = d
            out[j, v] = -d
    return out


def oracle_sibling(ast: Ast) -> np.ndarray:
    n = len(ast.nodes)
    out = np.zeros((n, n), dtype=np.int64)
    for i in range(n):
        for j in range(n):
            pi, pj = ast.nodes[i].parent, ast.nodes[j].parent
            if i != j and pi is not None and pi == pj:
                out[i, j] = ast.nodes[j].child_index - ast.nodes[i].child_index
    return out


def oracle_paths(ast: Ast, k: int) -> set[tuple[int, ...]]:
    """All-pairs check: b is a descendant of a at distance k + 1."""
    out = set()
    for a in range(len(ast.nodes)):
        for b in range(len(ast.nodes)):
            chain = [b]
            while chain[-1] != a and ast.nodes[chain[-1]].parent is not None:
                chain.append(ast.nodes[chain[-1]].parent)
            if chain[-1] == a and len(chain) == k + 2:
                out.add(tuple(reversed(chain)))
    return out


def tiny_config(**overrides) -> ModelConfig:
    """A model small enough to train for a few steps inside a unit test."""
    base = dict(d_pe=8, d_emb=8, d_dec=16, d_ff=32, heads=2, cse_layers=1, enc_layers=1, dec_layers=1,
                k_clusters=3, max_summary=8, lr=3e-3, dropout=0.0, batch_size=4)
    return ModelConfig(**{**base, **overrides})


@pytest.fixture(scope="session")
def toy_records():
    return read_jsonl(TOY_CORPUS)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: minutes-long acceptance runs")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)

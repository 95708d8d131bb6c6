import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from csatrans.ast_ingest import (
    BOS,
    EOS,
    PAD,
    UNK,
    Ast,
    DatasetRecord,
    Vocabulary,
    attach_subtokens,
    build_vocab,
    dumps,
    iter_source_records,
    load_serialized,
    parse_source,
    preprocess,
    read_jsonl,
    serialize,
    subtokenize,
    tokenize_summary,
    truncate,
    validate,
    write_jsonl,
)
from csatrans.errors import EmptyCorpus, EmptyInput, ParseError, SchemaError, TopologyError

from conftest import random_tree


def test_parse_python_function():
    ast = parse_source("def f(): pass", "python")
    assert ast.nodes[0].node_type == "module"
    assert ast.nodes[0].parent is None
    assert ast.nodes[1].node_type == "function_definition"
    # snapshot of the grammar's named nodes; punctuation and keywords are dropped
    assert ast.types == ["module", "function_definition", "f", "parameters", "block", "pass_statement"]


def test_parse_identifier_statement_keeps_text():
    ast = parse_source("config_option_show", "python")
    assert ast.types == ["module", "expression_statement", "config_option_show"]
    leaf = ast.nodes[-1]
    assert leaf.identifier and not leaf.children


def test_parse_java():
    ast = parse_source("class A { int get() { return x; } }", "java")
    assert ast.nodes[0].node_type == "program"
    assert "method_declaration" in ast.types
    assert "x" in ast.types


def test_parse_drops_comments():
    ast = parse_source("# note\nx = 1  # more\n", "python")
    assert "comment" not in ast.types


def test_parse_errors():
    with pytest.raises(EmptyInput):
        parse_source("", "python")
    with pytest.raises(EmptyInput):
        parse_source("   \n", "python")
    with pytest.raises(ParseError):
        parse_source("def broken(:\n", "python")


def test_preorder_ids_and_child_index():
    ast = parse_source("def f(a, b):\n    if a:\n        return b\n    return a + b\n", "python")
    validate(ast)
    for node in ast.nodes:
        for ci, c in enumerate(node.children):
            assert ast.nodes[c].parent == node.id
            assert ast.nodes[c].child_index == ci
            assert c > node.id


def test_load_minimal_tree():
    ast = load_serialized({"nodes": [{"id": 0, "type": "module", "parent": None, "children": []}]})
    assert len(ast) == 1


def test_load_inconsistent_links():
    rec = {"nodes": [
        {"id": 0, "type": "m", "parent": None, "children": [1]},
        {"id": 1, "type": "a", "parent": 0, "children": []},
        {"id": 2, "type": "b", "parent": 1, "children": []},
    ]}
    with pytest.raises(TopologyError):
        load_serialized(rec)


@pytest.mark.parametrize("rec", [
    {},
    {"nodes": []},
    {"nodes": [{"id": 0, "type": "m", "parent": None}]},
    {"nodes": [{"id": 0, "type": 3, "parent": None, "children": []}]},
    "not json",
])
def test_load_schema_errors(rec):
    with pytest.raises(SchemaError):
        load_serialized(rec)


def test_load_cycle():
    rec = {"nodes": [
        {"id": 0, "type": "m", "parent": None, "children": []},
        {"id": 1, "type": "a", "parent": 2, "children": [2]},
        {"id": 2, "type": "b", "parent": 1, "children": [1]},
    ]}
    with pytest.raises(TopologyError):
        load_serialized(rec)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 60), st.integers(0, 2**32 - 1))
def test_serialize_round_trip(n, seed):
    ast = random_tree(np.random.default_rng(seed), n)
    text = dumps(ast, ["x"])
    again = load_serialized(text)
    assert again == ast
    assert dumps(again, ["x"]) == text


def test_parse_matches_load_serialized():
    ast = parse_source("def getValue(self):\n    return self.value\n", "python", "g")
    assert load_serialized(serialize(ast)) == ast


@pytest.mark.parametrize("ident,expected", [
    ("config_option_show", ["config", "option", "show"]),
    ("getMaxValue", ["get", "max", "value"]),
    ("HTTPServer", ["http", "server"]),
    ("s", ["s"]),
    ("__init__", ["init"]),
    ("parseXMLFile2", ["parse", "xml", "file2"]),
])
def test_subtokenize(ident, expected):
    assert subtokenize(ident) == expected


@given(st.from_regex(r"[A-Za-z][A-Za-z0-9_]{0,20}", fullmatch=True))
def test_subtokenize_idempotent(ident):
    for piece in subtokenize(ident):
        assert subtokenize(piece) == [piece]


def test_attach_subtokens_chain():
    ast = parse_source("config_option_show", "python")
    out = attach_subtokens(ast)
    assert out.types == ["module", "expression_statement", "config", "option", "show"]
    assert out.parents == [None, 0, 1, 2, 3]


def test_attach_subtokens_single_piece_unchanged():
    ast = parse_source("s", "python")
    assert attach_subtokens(ast).types == ast.types


def test_attach_subtokens_count_and_order():
    ast = parse_source("def getUserName(first_name, x):\n    return first_name\n", "python")
    out = attach_subtokens(ast)
    extra = sum(len(subtokenize(n.node_type)) - 1 for n in ast.nodes if n.identifier and not n.children)
    assert len(out) == len(ast) + extra
    validate(out)
    # non-identifier nodes keep their relative pre-order
    plain = [n.node_type for n in ast.nodes if not n.identifier]
    assert [n.node_type for n in out.nodes if not n.identifier] == plain


def test_truncate():
    rng = np.random.default_rng(0)
    small = random_tree(rng, 10)
    assert truncate(small, 150) is small
    big = random_tree(rng, 200)
    cut = truncate(big, 150)
    assert len(cut) == 150
    validate(cut)
    assert all(n.parent is None or n.parent < 150 for n in cut.nodes)


def test_truncate_chain():
    chain = Ast.from_parents(["t"] * 300, [None] + list(range(299)))
    cut = truncate(chain, 150)
    assert len(cut) == 150 and cut.depth()[-1] == 149


def test_preprocess_bound():
    code = "def f():\n" + "".join(f"    veryLongName_{i}_partA = otherName{i}\n" for i in range(60))
    assert len(preprocess(parse_source(code, "python"))) <= 150


def test_vocab_sizes_and_ties():
    recs = [DatasetRecord(Ast.from_parents(["b", "a", "c"], [None, 0, 0]), [])]
    v = build_vocab(recs, "node_types", 10000)
    assert len(v) == 7
    # a and b tie on frequency; lexicographic order wins
    assert v.encode(["a", "b", "c"]) == [4, 5, 6]
    assert v.encode(["zzz"]) == [UNK]
    assert (PAD, UNK, BOS, EOS) == (0, 1, 2, 3)


def test_vocab_frequency_order_and_cap():
    recs = [DatasetRecord(Ast.from_parents(["m"], [None]), ["x", "y", "y", "z", "z", "z"])]
    v = build_vocab(recs, "summary", 6)
    assert v.to_list() == ["z", "y"]
    assert len(v) == 6
    assert Vocabulary.from_list(v.to_list(), 6) == v
    assert v.decode(v.encode(["z", "y", "q"]) + [EOS, PAD]) == ["z", "y", "<unk>"]


def test_vocab_empty_corpus():
    with pytest.raises(EmptyCorpus):
        build_vocab([], "summary", 10)


def test_tokenize_summary():
    assert tokenize_summary("Return the Value.") == ["return", "the", "value."]
    assert len(tokenize_summary("w " * 80)) == 50


def test_iter_source_records_skips_failures():
    items = [("a", "x = 1", ["a"]), ("b", "def (:", ["b"]), ("c", "", ["c"])]
    out = list(iter_source_records(items, "python"))
    assert isinstance(out[0], DatasetRecord)
    assert isinstance(out[1], ParseError)
    assert isinstance(out[2], EmptyInput)


def test_jsonl_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    recs = [DatasetRecord(random_tree(rng, 8), ["s", str(i)]) for i in range(5)]
    p = tmp_path / "r.jsonl"
    assert write_jsonl(recs, p) == 5
    back = read_jsonl(p)
    assert [r.ast for r in back] == [r.ast for r in recs]
    assert [r.summary_tokens for r in back] == [r.summary_tokens for r in recs]


def test_read_jsonl_reports_line(tmp_path):
    p = tmp_path / "bad.jsonl"
    p.write_text(json.dumps({"nodes": []}) + "\n")
    with pytest.raises(SchemaError, match=":1:"):
        read_jsonl(p)


def test_toy_corpus_is_clean(toy_records):
    assert len(toy_records) == 500
    for r in toy_records:
        validate(r.ast)
        assert 1 <= len(r.ast) <= 150
        assert 0 < len(r.summary_tokens) <= 50

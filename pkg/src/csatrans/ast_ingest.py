"""AST ingestion: parsing, (de)serialization, subtokens, truncation, vocabularies."""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

from .errors import EmptyCorpus, EmptyInput, ParseError, SchemaError, TopologyError

PAD, UNK, BOS, EOS = 0, 1, 2, 3
SPECIALS = ("<pad>", "<unk>", "<bos>", "<eos>")
LANGUAGES = ("java", "python")

MAX_NODES = 150
MAX_SUMMARY = 50

# Named leaf kinds whose source text replaces the grammar type.
IDENTIFIER_TYPES = frozenset(
    {"identifier", "type_identifier", "field_identifier", "property_identifier"}
)
# Named kinds dropped together with their subtrees.
SKIPPED_TYPES = frozenset({"comment", "line_comment", "block_comment"})


@dataclass
class AstNode:
    id: int
    node_type: str
    parent: int | None
    children: list[int] = field(default_factory=list)
    child_index: int = 0
    identifier: bool = False


@dataclass
class Ast:
    nodes: list[AstNode]
    source_language: str = "python"
    origin_id: str = ""

    def __len__(self) -> int:
        return len(self.nodes)

    @property
    def types(self) -> list[str]:
        return [n.node_type for n in self.nodes]

    @property
    def parents(self) -> list[int | None]:
        return [n.parent for n in self.nodes]

    def depth(self) -> list[int]:
        out = [0] * len(self.nodes)
        for n in self.nodes[1:]:
            out[n.id] = out[n.parent] + 1
        return out

    @classmethod
    def from_parents(
        cls,
        types: Sequence[str],
        parents: Sequence[int | None],
        source_language: str = "python",
        origin_id: str = "",
        identifiers: Iterable[int] = (),
    ) -> "Ast":
        """Build from a parent list; ids are re-assigned in pre-order.

        Children keep the order of their original ids.
        """
        n = len(types)
        if n == 0:
            raise EmptyInput("tree has no nodes")
        kids: list[list[int]] = [[] for _ in range(n)]
        roots = []
        for i, p in enumerate(parents):
            if p is None:
                roots.append(i)
            else:
                if not 0 <= p < n:
                    raise TopologyError(f"node {i} has out-of-range parent {p}")
                kids[p].append(i)
        if len(roots) != 1:
            raise TopologyError(f"expected one root, found {len(roots)}")
        idents = set(identifiers)
        order: list[int] = []
        stack = [roots[0]]
        while stack:
            v = stack.pop()
            order.append(v)
            stack.extend(reversed(kids[v]))
        if len(order) != n:
            raise TopologyError("parent links contain a cycle")
        new_id = {old: new for new, old in enumerate(order)}
        nodes = []
        for old in order:
            p = parents[old]
            nodes.append(
                AstNode(
                    id=new_id[old],
                    node_type=types[old],
                    parent=None if p is None else new_id[p],
                    children=[new_id[c] for c in kids[old]],
                    identifier=old in idents,
                )
            )
        for node in nodes:
            for ci, c in enumerate(node.children):
                nodes[c].child_index = ci
        return cls(nodes, source_language, origin_id)


@dataclass
class DatasetRecord:
    ast: Ast
    summary_tokens: list[str]


def validate(ast: Ast) -> None:
    """Raise TopologyError unless ``ast`` is a pre-order indexed tree."""
    nodes = ast.nodes
    n = len(nodes)
    if n == 0:
        raise TopologyError("tree has no nodes")
    for i, node in enumerate(nodes):
        if node.id != i:
            raise TopologyError(f"node at position {i} has id {node.id}")
    if nodes[0].parent is not None:
        raise TopologyError("node 0 must be the root")
    for node in nodes[1:]:
        p = node.parent
        if p is None:
            raise TopologyError(f"node {node.id} is a second root")
        if not 0 <= p < n:
            raise TopologyError(f"node {node.id} has out-of-range parent {p}")
        siblings = nodes[p].children
        if node.id not in siblings:
            raise TopologyError(f"node {node.id} lists parent {p}, which does not list it")
        if siblings.index(node.id) != node.child_index:
            raise TopologyError(f"node {node.id} has child_index {node.child_index}")
    for node in nodes:
        for c in node.children:
            if not 0 <= c < n or nodes[c].parent != node.id:
                raise TopologyError(f"node {node.id} lists child {c}, which does not list it")
    # pre-order: walking the children lists must visit ids 0..n-1 in order
    stack, expected = [0], 0
    while stack:
        v = stack.pop()
        if v != expected:
            raise TopologyError("ids are not in pre-order")
        expected += 1
        stack.extend(reversed(nodes[v].children))
    if expected != n:
        raise TopologyError("tree is not connected")


# -- parsing ---------------------------------------------------------------

_PARSERS: dict[str, object] = {}


def _parser(lang: str):
    if lang not in LANGUAGES:
        raise ValueError(f"unsupported language {lang!r}")
    if lang not in _PARSERS:
        from tree_sitter import Language, Parser

        if lang == "python":
            import tree_sitter_python as grammar
        else:
            import tree_sitter_java as grammar
        _PARSERS[lang] = Parser(Language(grammar.language()))
    return _PARSERS[lang]


def parse_source(code: str, lang: str, origin_id: str = "") -> Ast:
    """Parse ``code`` into an Ast of named grammar nodes.

    Anonymous (punctuation/keyword) nodes and comments are dropped. Identifier
    leaves carry their source text as ``node_type``.
    """
    if not code.strip():
        raise EmptyInput("source is empty")
    tree = _parser(lang).parse(code.encode("utf8"))
    root = tree.root_node
    if root.has_error:
        raise ParseError(f"{lang} grammar rejected {origin_id or 'input'}")
    types: list[str] = []
    parents: list[int | None] = []
    idents: list[int] = []
    stack = [(root, None)]
    while stack:
        ts_node, parent = stack.pop()
        me = len(types)
        if ts_node.type in IDENTIFIER_TYPES and ts_node.named_child_count == 0:
            types.append(ts_node.text.decode("utf8"))
            idents.append(me)
        else:
            types.append(ts_node.type)
        parents.append(parent)
        kids = [c for c in ts_node.named_children if c.type not in SKIPPED_TYPES]
        stack.extend((c, me) for c in reversed(kids))
    return Ast.from_parents(types, parents, lang, origin_id, idents)


# -- serialization ---------------------------------------------------------

def serialize(ast: Ast, summary: Sequence[str] | None = None) -> dict:
    nodes = []
    for n in sorted(ast.nodes, key=lambda n: n.id):
        entry = {"id": n.id, "type": n.node_type, "parent": n.parent, "children": sorted(n.children)}
        if n.identifier:
            entry["ident"] = True
        nodes.append(entry)
    record = {"origin_id": ast.origin_id, "lang": ast.source_language, "nodes": nodes}
    if summary is not None:
        record["summary"] = list(summary)
    return record


def dumps(ast: Ast, summary: Sequence[str] | None = None) -> str:
    return json.dumps(serialize(ast, summary), separators=(",", ":"))


def load_serialized(record: dict | str) -> Ast:
    if isinstance(record, str):
        try:
            record = json.loads(record)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"not JSON: {exc}") from exc
    if not isinstance(record, dict) or not isinstance(record.get("nodes"), list):
        raise SchemaError("record needs a 'nodes' list")
    lang = record.get("lang", "python")
    if lang not in LANGUAGES:
        raise SchemaError(f"unknown lang {lang!r}")
    raw = record["nodes"]
    if not raw:
        raise SchemaError("'nodes' is empty")
    nodes = []
    for entry in raw:
        try:
            nid, ntype, parent, children = entry["id"], entry["type"], entry["parent"], entry["children"]
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"node entry missing field {exc}") from exc
        if not isinstance(nid, int) or not isinstance(ntype, str):
            raise SchemaError(f"bad node entry {entry!r}")
        if parent is not None and not isinstance(parent, int):
            raise SchemaError(f"bad parent in {entry!r}")
        if not isinstance(children, list) or not all(isinstance(c, int) for c in children):
            raise SchemaError(f"bad children in {entry!r}")
        nodes.append(AstNode(nid, ntype, parent, list(children), 0, bool(entry.get("ident", False))))
    nodes.sort(key=lambda n: n.id)
    if [n.id for n in nodes] != list(range(len(nodes))):
        raise TopologyError("node ids must be 0..N-1")
    for n in nodes:
        for ci, c in enumerate(n.children):
            if 0 <= c < len(nodes):
                nodes[c].child_index = ci
    ast = Ast(nodes, lang, str(record.get("origin_id", "")))
    validate(ast)
    return ast


def load_record(record: dict | str) -> DatasetRecord:
    if isinstance(record, str):
        record = json.loads(record)
    summary = record.get("summary", [])
    if not isinstance(summary, list):
        raise SchemaError("'summary' must be a list of strings")
    return DatasetRecord(load_serialized(record), [str(t) for t in summary])


def read_jsonl(path) -> list[DatasetRecord]:
    out = []
    with open(path, encoding="utf8") as fh:
        for lineno, line in enumerate(fh, 1):
            if line.strip():
                try:
                    out.append(load_record(line))
                except (SchemaError, TopologyError, json.JSONDecodeError) as exc:
                    raise SchemaError(f"{path}:{lineno}: {exc}") from exc
    return out


def write_jsonl(records: Iterable[DatasetRecord], path) -> int:
    count = 0
    with open(path, "w", encoding="utf8") as fh:
        for rec in records:
            fh.write(dumps(rec.ast, rec.summary_tokens) + "\n")
            count += 1
    return count


# -- preprocessing ---------------------------------------------------------

_LOWER_UPPER = re.compile(r"(?<=[a-z0-9])(?=[A-Z])")
_ACRONYM_END = re.compile(r"(?<=[A-Z])(?=[A-Z][a-z])")


def subtokenize(identifier: str) -> list[str]:
    """Split on snake_case and CamelCase boundaries, lowercased.

    An uppercase run stays together up to the last capital before a lowercase
    letter, so ``HTTPServer`` gives ``["http", "server"]``.
    """
    s = _ACRONYM_END.sub("_", _LOWER_UPPER.sub("_", identifier))
    parts = [p.lower() for p in s.split("_") if p]
    return parts or [identifier.lower()]


def attach_subtokens(ast: Ast) -> Ast:
    """Replace each multi-word identifier leaf by a vertical subtoken chain."""
    types: list[str] = []
    parents: list[int | None] = []
    idents: list[int] = []
    remap: dict[int, int] = {}
    for node in ast.nodes:
        me = len(types)
        remap[node.id] = me
        parent = None if node.parent is None else remap[node.parent]
        pieces = subtokenize(node.node_type) if node.identifier and not node.children else None
        if not pieces or len(pieces) == 1:
            types.append(node.node_type if not pieces else pieces[0])
            parents.append(parent)
            if node.identifier:
                idents.append(me)
            continue
        for piece in pieces:
            idents.append(len(types))
            types.append(piece)
            parents.append(parent)
            parent = len(types) - 1
    return Ast.from_parents(types, parents, ast.source_language, ast.origin_id, idents)


def truncate(ast: Ast, max_nodes: int = MAX_NODES) -> Ast:
    """Keep the first ``max_nodes`` nodes in pre-order (always a connected tree)."""
    if len(ast.nodes) <= max_nodes:
        return ast
    nodes = [
        AstNode(n.id, n.node_type, n.parent, [c for c in n.children if c < max_nodes], n.child_index, n.identifier)
        for n in ast.nodes[:max_nodes]
    ]
    return Ast(nodes, ast.source_language, ast.origin_id)


def tokenize_summary(text: str, max_len: int = MAX_SUMMARY) -> list[str]:
    return text.lower().split()[:max_len]


def preprocess(ast: Ast, max_nodes: int = MAX_NODES) -> Ast:
    return truncate(attach_subtokens(ast), max_nodes)


# -- vocabulary ------------------------------------------------------------

class Vocabulary:
    def __init__(self, tokens: Sequence[str] = (), max_size: int = 20000):
        self.max_size = max_size
        self.id_to_token: list[str] = list(SPECIALS)
        self.token_to_id: dict[str, int] = {t: i for i, t in enumerate(SPECIALS)}
        for t in tokens:
            if t in self.token_to_id:
                continue
            if len(self.id_to_token) >= max_size:
                break
            self.token_to_id[t] = len(self.id_to_token)
            self.id_to_token.append(t)

    def __len__(self) -> int:
        return len(self.id_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.id_to_token == other.id_to_token

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.token_to_id.get(t, UNK) for t in tokens]

    def decode(self, ids: Iterable[int], strip: bool = True) -> list[str]:
        out = []
        for i in ids:
            if strip and i == EOS:
                break
            if strip and i in (PAD, BOS):
                continue
            out.append(self.id_to_token[i] if 0 <= i < len(self) else SPECIALS[UNK])
        return out

    def to_list(self) -> list[str]:
        return self.id_to_token[len(SPECIALS):]

    @classmethod
    def from_list(cls, tokens: Sequence[str], max_size: int = 20000) -> "Vocabulary":
        return cls(tokens, max_size)


def build_vocab(corpus: Iterable[DatasetRecord], which: str, max_size: int) -> Vocabulary:
    """Most-frequent-first vocabulary after the four specials; ties sort lexicographically."""
    if which not in ("node_types", "summary"):
        raise ValueError(f"unknown vocabulary kind {which!r}")
    counts: Counter[str] = Counter()
    seen = False
    for rec in corpus:
        seen = True
        counts.update(rec.ast.types if which == "node_types" else rec.summary_tokens)
    if not seen:
        raise EmptyCorpus("cannot build a vocabulary from an empty corpus")
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return Vocabulary([t for t, _ in ranked if t not in SPECIALS], max_size)


def iter_source_records(
    items: Iterable[tuple[str, str, list[str]]], lang: str, max_nodes: int = MAX_NODES
) -> Iterator[DatasetRecord | Exception]:
    """Parse (origin_id, code, summary) triples; failures are yielded, not raised."""
    for origin_id, code, summary in items:
        try:
            ast = preprocess(parse_source(code, lang, origin_id), max_nodes)
        except (ParseError, EmptyInput) as exc:
            yield exc
            continue
        yield DatasetRecord(ast, summary[:MAX_SUMMARY])

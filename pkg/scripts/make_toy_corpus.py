"""Generate the small seeded Python corpus used by the tests and the INP benchmark.

Writes ``sources.jsonl`` (id, code, summary) and ``corpus.jsonl`` (ingested
records) under the output directory. Functions come from templates with
randomized identifiers and optional extra statements, so tree shapes vary.
"""

from __future__ import annotations

import argparse
import json
import random
from pathlib import Path

from csatrans.ast_ingest import iter_source_records, tokenize_summary, write_jsonl

NOUNS = ["user", "item", "order", "price", "name", "file", "path", "record", "value", "count",
         "node", "edge", "token", "line", "word", "score", "key", "entry", "buffer", "config"]
VERBS = ["load", "save", "parse", "update", "build", "check", "compute", "find", "remove", "format"]
ADJ = ["total", "max", "min", "first", "last", "valid", "raw", "clean", "new", "old"]


def camel(*parts):
    return parts[0] + "".join(p.title() for p in parts[1:])


def snake(*parts):
    return "_".join(parts)


def extra(rng, var):
    """Optional filler statement that changes tree shape but not meaning."""
    return rng.choice([
        "",
        f"    assert {var} is not None\n",
        f"    if {var} is None:\n        raise ValueError('missing {var}')\n",
        f"    print({var})\n",
    ])


def t_getter(rng):
    n, a = rng.choice(NOUNS), rng.choice(ADJ)
    name = snake("get", a, n)
    return f"def {name}(self):\n    return self.{a}_{n}\n", f"return the {a} {n}"


def t_setter(rng):
    n = rng.choice(NOUNS)
    return (f"def set_{n}(self, {n}):\n{extra(rng, n)}    self.{n} = {n}\n",
            f"set the {n} attribute")


def t_sum(rng):
    n = rng.choice(NOUNS)
    return (f"def total_{n}s({n}s):\n{extra(rng, n + 's')}    total = 0\n    for {n} in {n}s:\n"
            f"        total += {n}\n    return total\n", f"compute the sum of all {n}s")


def t_max(rng):
    n = rng.choice(NOUNS)
    return (f"def max_{n}({n}s):\n    best = {n}s[0]\n    for x in {n}s:\n        if x > best:\n"
            f"            best = x\n    return best\n", f"find the largest {n} in the list")


def t_empty(rng):
    n = rng.choice(NOUNS)
    fn = rng.choice([snake("is", "empty"), camel("is", n, "empty")])
    return f"def {fn}({n}s):\n    return len({n}s) == 0\n", f"check whether the {n} list is empty"


def t_filter(rng):
    n = rng.choice(NOUNS)
    return (f"def positive_{n}s({n}s):\n    return [x for x in {n}s if x > 0]\n",
            f"keep only positive {n}s")


def t_count(rng):
    n = rng.choice(NOUNS)
    return (f"def count_{n}({n}s, target):\n    count = 0\n    for x in {n}s:\n        if x == target:\n"
            f"            count += 1\n    return count\n", f"count how often the target {n} occurs")


def t_read(rng):
    n = rng.choice(NOUNS)
    return (f"def read_{n}(path):\n    with open(path) as handle:\n        return handle.read()\n",
            f"read the {n} from a file")


def t_write(rng):
    n = rng.choice(NOUNS)
    return (f"def write_{n}(path, {n}):\n{extra(rng, n)}    with open(path, 'w') as handle:\n"
            f"        handle.write({n})\n", f"write the {n} to a file")


def t_join(rng):
    n = rng.choice(NOUNS)
    sep = rng.choice(["', '", "' '", "'-'"])
    return f"def join_{n}s({n}s):\n    return {sep}.join({n}s)\n", f"join {n}s into one string"


def t_reverse(rng):
    n = rng.choice(NOUNS)
    return f"def reverse_{n}s({n}s):\n    return {n}s[::-1]\n", f"return the {n}s in reverse order"


def t_lookup(rng):
    n, k = rng.choice(NOUNS), rng.choice(NOUNS)
    return (f"def lookup_{n}(table, {k}, default=None):\n    if {k} in table:\n        return table[{k}]\n"
            f"    return default\n", f"look up the {n} for a {k} with a default")


def t_clamp(rng):
    n = rng.choice(NOUNS)
    return (f"def clamp_{n}({n}, low, high):\n    return max(low, min({n}, high))\n",
            f"clamp the {n} between low and high")


def t_even(rng):
    n = rng.choice(NOUNS)
    return f"def is_even_{n}({n}):\n    return {n} % 2 == 0\n", f"check whether the {n} is even"


def t_countdown(rng):
    n = rng.choice(NOUNS)
    return (f"def drain_{n}s(queue):\n    while queue:\n        {n} = queue.pop()\n        yield {n}\n",
            f"yield {n}s until the queue is empty")


def t_parse_int(rng):
    n = rng.choice(NOUNS)
    return (f"def parse_{n}(text):\n    try:\n        return int(text)\n    except ValueError:\n"
            f"        return None\n", f"parse the {n} as an integer or return none")


def t_squares(rng):
    n = rng.choice(NOUNS)
    return f"def square_{n}s({n}s):\n    return [x * x for x in {n}s]\n", f"square every {n} in the list"


def t_sort(rng):
    n, k = rng.choice(NOUNS), rng.choice(NOUNS)
    return (f"def sort_{n}s_by_{k}({n}s):\n    return sorted({n}s, key=lambda x: x.{k})\n",
            f"sort {n}s by their {k}")


def t_merge(rng):
    n = rng.choice(NOUNS)
    return (f"def merge_{n}s(left, right):\n    result = dict(left)\n    result.update(right)\n"
            f"    return result\n", f"merge two {n} dictionaries")


def t_index(rng):
    n = rng.choice(NOUNS)
    return (f"def index_of_{n}({n}s, target):\n    for i, x in enumerate({n}s):\n        if x == target:\n"
            f"            return i\n    return -1\n", f"find the index of the target {n}")


def t_average(rng):
    n = rng.choice(NOUNS)
    return (f"def average_{n}({n}s):\n{extra(rng, n + 's')}    if not {n}s:\n        return 0.0\n"
            f"    return sum({n}s) / len({n}s)\n", f"compute the average {n}")


def t_method_call(rng):
    v, n = rng.choice(VERBS), rng.choice(NOUNS)
    fn = camel(v, n)
    return (f"def {fn}(self, {n}):\n    result = self.{snake(v, n)}({n})\n    self.log(result)\n"
            f"    return result\n", f"{v} the {n} and log the result")


def t_class_init(rng):
    n, m = rng.choice(NOUNS), rng.choice(NOUNS)
    return (f"def __init__(self, {n}, {m}):\n    self.{n} = {n}\n    self.{m} = {m}\n    self.cache = {{}}\n",
            f"initialize with {n} and {m}")


def t_nested(rng):
    n = rng.choice(NOUNS)
    return (f"def flatten_{n}s(groups):\n    out = []\n    for group in groups:\n        for {n} in group:\n"
            f"            out.append({n})\n    return out\n", f"flatten nested groups of {n}s")


def t_exists(rng):
    n = rng.choice(NOUNS)
    return (f"def has_{n}(self, key):\n    return key in self.{n}s and self.{n}s[key] is not None\n",
            f"check whether a {n} exists for the key")


TEMPLATES = [t_getter, t_setter, t_sum, t_max, t_empty, t_filter, t_count, t_read, t_write, t_join,
             t_reverse, t_lookup, t_clamp, t_even, t_countdown, t_parse_int, t_squares, t_sort,
             t_merge, t_index, t_average, t_method_call, t_class_init, t_nested, t_exists]


def generate(n: int, seed: int) -> list[tuple[str, str, list[str]]]:
    rng = random.Random(seed)
    out = []
    for i in range(n):
        code, summary = rng.choice(TEMPLATES)(rng)
        out.append((f"toy-{i:04d}", code, tokenize_summary(summary)))
    return out


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="data/toy")
    ap.add_argument("-n", type=int, default=500)
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args(argv)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    items = generate(args.n, args.seed)
    with open(out / "sources.jsonl", "w") as fh:
        for origin, code, summary in items:
            fh.write(json.dumps({"id": origin, "code": code, "summary": " ".join(summary)}) + "\n")
    records = [r for r in iter_source_records(items, "python") if not isinstance(r, Exception)]
    write_jsonl(records, out / "corpus.jsonl")
    print(f"wrote {len(records)} records to {out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

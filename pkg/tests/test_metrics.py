import math
from functools import lru_cache

import pytest
from hypothesis import given, settings, strategies as st

from csatrans.errors import EmptyCorpus
from csatrans.metrics import EvalPair, bleu4, evaluate, lcs_length, rouge_l, rouge_l_pair

# the fixtures are quoted to display precision; the closed forms they round are exact
BP_FIXTURE = 100 * math.exp(-0.25)
ROUGE_FIXTURE = 200 / 3


def recursive_lcs(a, b):
    a, b = tuple(a), tuple(b)

    @lru_cache(maxsize=None)
    def go(i, j):
        if i == len(a) or j == len(b):
            return 0
        if a[i] == b[j]:
            return 1 + go(i + 1, j + 1)
        return max(go(i + 1, j), go(i, j + 1))

    return go(0, 0)


def oracle_rouge(cand, ref, beta=1.2):
    lcs = recursive_lcs(cand, ref)
    if lcs == 0:
        return 0.0
    p, r = lcs / len(cand), lcs / len(ref)
    return 100 * (1 + beta * beta) * p * r / (r + beta * beta * p)


def oracle_sentence_bleu(cand, ref):
    """Straight transcription of the closed formula, counting n-grams by list scans."""
    if not cand:
        return 0.0
    logs = []
    for n in range(1, 5):
        grams = [tuple(cand[i : i + n]) for i in range(len(cand) - n + 1)]
        pool = [tuple(ref[i : i + n]) for i in range(len(ref) - n + 1)]
        hit = 0
        for g in grams:
            if g in pool:
                pool.remove(g)
                hit += 1
        if n == 1 and hit == 0:
            return 0.0
        total = len(grams)
        if hit == 0:
            hit, total = 1, total + 1
        logs.append(math.log(hit / total))
    bp = 1.0 if len(cand) >= len(ref) else math.exp(1 - len(ref) / len(cand))
    return 100 * bp * math.exp(sum(logs) / 4)


def test_bleu_fixtures():
    assert bleu4([("a b c d".split(), "a b c d e".split())]) == pytest.approx(BP_FIXTURE, abs=1e-6)
    assert round(bleu4([("a b c d".split(), "a b c d e".split())]), 2) == 77.88
    same = "return the max value".split()
    assert bleu4([(same, same)]) == pytest.approx(100.0, abs=1e-9)
    assert bleu4([("x y z w".split(), "a b c d".split())]) == 0.0


def test_rouge_fixtures():
    assert rouge_l([("a b c".split(), "a c b".split())]) == pytest.approx(ROUGE_FIXTURE, abs=1e-6)
    assert round(rouge_l([("a b c".split(), "a c b".split())]), 1) == 66.7
    assert rouge_l([("a b".split(), "a b".split())]) == pytest.approx(100.0)
    assert rouge_l([("a b".split(), "c d".split())]) == 0.0


def test_lcs_examples():
    assert lcs_length("abcbdab", "bdcaba") == 4
    assert lcs_length([], ["a"]) == 0


tokens = st.lists(st.sampled_from(list("abcde")), min_size=1, max_size=10)


@settings(max_examples=300, deadline=None)
@given(tokens, tokens)
def test_against_oracles(cand, ref):
    assert lcs_length(cand, ref) == recursive_lcs(cand, ref)
    assert 100 * rouge_l_pair(cand, ref) == pytest.approx(oracle_rouge(cand, ref), abs=1e-9)
    assert bleu4([(cand, ref)]) == pytest.approx(oracle_sentence_bleu(cand, ref), abs=1e-9)
    assert bleu4([(cand, ref)], sentence_mean=True) == pytest.approx(oracle_sentence_bleu(cand, ref), abs=1e-9)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(tokens, tokens), min_size=1, max_size=6), st.randoms())
def test_order_invariance(pairs, rnd):
    shuffled = pairs[:]
    rnd.shuffle(shuffled)
    assert bleu4(shuffled) == pytest.approx(bleu4(pairs), abs=1e-9)
    assert rouge_l(shuffled) == pytest.approx(rouge_l(pairs), abs=1e-9)
    assert 0.0 <= bleu4(pairs) <= 100.0 and 0.0 <= rouge_l(pairs) <= 100.0


def test_corpus_vs_sentence_bleu():
    pairs = [EvalPair("a b c d".split(), "a b c d".split()), EvalPair("x".split(), "y z".split())]
    assert bleu4(pairs, sentence_mean=True) == pytest.approx(50.0)
    assert bleu4(pairs) != pytest.approx(50.0)


def test_empty_corpus():
    for fn in (bleu4, rouge_l, evaluate):
        with pytest.raises(EmptyCorpus):
            fn([])


def test_evaluate_keys():
    out = evaluate([("a b".split(), "a b".split())])
    assert out == {"bleu4": pytest.approx(100.0), "rougeL": pytest.approx(100.0), "n_pairs": 1}

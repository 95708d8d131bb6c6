"""Corpus BLEU-4 and ROUGE-L over tokenized summaries."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

from .errors import EmptyCorpus


@dataclass
class EvalPair:
    candidate: list[str]
    reference: list[str]


def _as_pairs(pairs) -> list[EvalPair]:
    out = [p if isinstance(p, EvalPair) else EvalPair(list(p[0]), list(p[1])) for p in pairs]
    if not out:
        raise EmptyCorpus("no evaluation pairs")
    return out


def ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def _bleu_from_counts(matches: list[int], totals: list[int], cand_len: int, ref_len: int) -> float:
    if cand_len == 0 or matches[0] == 0:
        return 0.0
    log_p = 0.0
    for n, (m, t) in enumerate(zip(matches, totals), start=1):
        if m == 0:  # add-one smoothing for higher orders with no match
            m, t = m + 1, t + 1
        log_p += math.log(m / t) / len(matches)
    bp = 1.0 if cand_len >= ref_len else math.exp(1.0 - ref_len / cand_len)
    return 100.0 * bp * math.exp(log_p)


def _counts(pair: EvalPair, max_n: int):
    matches, totals = [], []
    for n in range(1, max_n + 1):
        cand, ref = ngrams(pair.candidate, n), ngrams(pair.reference, n)
        matches.append(sum(min(c, ref[g]) for g, c in cand.items()))
        totals.append(max(len(pair.candidate) - n + 1, 0))
    return matches, totals


def bleu4(pairs, sentence_mean: bool = False, max_n: int = 4) -> float:
    """Corpus BLEU (or the mean of sentence BLEU) scaled to [0, 100].

    Clipped n-gram counts, uniform weights, brevity penalty. A zero n-gram
    precision at order >= 2 is smoothed by adding one to numerator and
    denominator; a zero unigram precision gives 0.
    """
    pairs = _as_pairs(pairs)
    if sentence_mean:
        scores = []
        for p in pairs:
            m, t = _counts(p, max_n)
            scores.append(_bleu_from_counts(m, t, len(p.candidate), len(p.reference)))
        return sum(scores) / len(scores)
    matches, totals = [0] * max_n, [0] * max_n
    c = r = 0
    for p in pairs:
        m, t = _counts(p, max_n)
        matches = [a + b for a, b in zip(matches, m)]
        totals = [a + b for a, b in zip(totals, t)]
        c += len(p.candidate)
        r += len(p.reference)
    return _bleu_from_counts(matches, totals, c, r)


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l_pair(cand: Sequence[str], ref: Sequence[str], beta: float = 1.2) -> float:
    lcs = lcs_length(cand, ref)
    if lcs == 0:
        return 0.0
    p, r = lcs / len(cand), lcs / len(ref)
    return (1 + beta**2) * p * r / (r + beta**2 * p)


def rouge_l(pairs, beta: float = 1.2) -> float:
    pairs = _as_pairs(pairs)
    return 100.0 * sum(rouge_l_pair(p.candidate, p.reference, beta) for p in pairs) / len(pairs)


def evaluate(pairs, sentence_bleu: bool = False) -> dict:
    pairs = _as_pairs(pairs)
    return {"bleu4": bleu4(pairs, sentence_bleu), "rougeL": rouge_l(pairs), "n_pairs": len(pairs)}

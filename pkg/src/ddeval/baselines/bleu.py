"""Corpus-as-reference BLEU and self-BLEU.

Each candidate is scored against a pooled reference set: the clip count of
an n-gram is its largest count in any single reference sentence, and the
brevity penalty uses the reference length closest to the candidate's
(shorter one on ties).  Orders for which the candidate has no n-grams are
left out of the geometric mean; zero precisions are floored at ``1e-9``.
"""

from __future__ import annotations

import math
from collections import Counter
from typing import Iterable, Sequence

import numpy as np

from ddeval.corpus import Corpus, TokenSequence
from ddeval.errors import DataError

SMOOTH_EPS = 1e-9
DEFAULT_MAX_N = 5
DEFAULT_EVAL_CAP = 1000


def ngrams(seq: Sequence[int], n: int) -> Counter:
    return Counter(tuple(seq[i : i + n]) for i in range(len(seq) - n + 1))


def _closest_length(cand_len: int, lengths: Iterable[int]) -> int:
    return min(lengths, key=lambda r: (abs(r - cand_len), r))


def _sentence_score(cand: TokenSequence, max_counts: Sequence[dict], ref_len: int, max_n: int) -> float:
    c = len(cand)
    if c == 0:
        return 0.0
    log_p = []
    for n in range(1, max_n + 1):
        counts = ngrams(cand, n)
        total = sum(counts.values())
        if total == 0:
            break
        clipped = sum(min(k, max_counts[n - 1].get(g, 0)) for g, k in counts.items())
        log_p.append(math.log(max(clipped / total, SMOOTH_EPS)))
    bp = 1.0 if c > ref_len else math.exp(1.0 - ref_len / c)
    return bp * math.exp(math.fsum(log_p) / len(log_p))


def _max_counts(references: Iterable[TokenSequence], max_n: int) -> list[dict]:
    tables: list[dict] = [{} for _ in range(max_n)]
    for ref in references:
        for n in range(1, max_n + 1):
            table = tables[n - 1]
            for g, k in ngrams(ref, n).items():
                if k > table.get(g, 0):
                    table[g] = k
    return tables


def sentence_bleu(candidate: TokenSequence, references: Sequence[TokenSequence], max_n: int = DEFAULT_MAX_N
                  ) -> float:
    if max_n < 1:
        raise ValueError("max_n must be >= 1")
    if not references:
        raise DataError("no references")
    ref_len = _closest_length(len(candidate), {len(r) for r in references})
    return _sentence_score(candidate, _max_counts(references, max_n), ref_len, max_n)


def bleu(candidates: Corpus, references: Corpus, max_n: int = DEFAULT_MAX_N) -> float:
    """Mean per-sentence BLEU-``max_n`` of ``candidates`` against the whole reference corpus."""
    if max_n < 1:
        raise ValueError("max_n must be >= 1")
    if len(candidates) == 0 or len(references) == 0:
        raise DataError("BLEU needs non-empty candidate and reference corpora")
    tables = _max_counts(references, max_n)
    lengths = sorted({len(r) for r in references})
    scores = [_sentence_score(c, tables, _closest_length(len(c), lengths), max_n) for c in candidates]
    return math.fsum(scores) / len(scores)


def self_bleu(corpus: Corpus, max_n: int = DEFAULT_MAX_N, eval_cap: int | None = DEFAULT_EVAL_CAP,
              seed: int = 0) -> float:
    """Mean BLEU of each sentence against all other sentences.

    Corpora larger than ``eval_cap`` are first subsampled (seeded) to
    ``eval_cap`` sentences.
    """
    if max_n < 1:
        raise ValueError("max_n must be >= 1")
    if len(corpus) < 2:
        raise DataError("self-BLEU needs at least two sentences")
    seqs = corpus.sequences
    if eval_cap is not None and len(seqs) > eval_cap:
        idx = np.sort(np.random.default_rng(seed).choice(len(seqs), eval_cap, replace=False))
        seqs = [seqs[i] for i in idx]

    # per n-gram: best count, index of its first holder, runner-up count
    best: list[dict] = [{} for _ in range(max_n)]
    per_sentence = []
    for i, s in enumerate(seqs):
        grams = [ngrams(s, n) for n in range(1, max_n + 1)]
        per_sentence.append(grams)
        for n, counts in enumerate(grams):
            table = best[n]
            for g, k in counts.items():
                top, holder, second = table.get(g, (0, -1, 0))
                if k > top:
                    table[g] = (k, i, top)
                elif k > second:
                    table[g] = (top, holder, k)
    length_counts = Counter(len(s) for s in seqs)

    scores = []
    for i, s in enumerate(seqs):
        c = len(s)
        others = [r for r, k in length_counts.items() if k - (r == c) > 0]
        ref_len = _closest_length(c, others)
        if c == 0:
            scores.append(0.0)
            continue
        log_p = []
        for n, counts in enumerate(per_sentence[i]):
            total = sum(counts.values())
            if total == 0:
                break
            table = best[n]
            clipped = 0
            for g, k in counts.items():
                top, holder, second = table[g]
                clipped += min(k, second if holder == i else top)
            log_p.append(math.log(max(clipped / total, SMOOTH_EPS)))
        bp = 1.0 if c > ref_len else math.exp(1.0 - ref_len / c)
        scores.append(bp * math.exp(math.fsum(log_p) / len(log_p)))
    return math.fsum(scores) / len(scores)

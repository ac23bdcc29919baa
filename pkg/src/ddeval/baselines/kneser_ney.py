"""Interpolated Kneser-Ney n-gram language model.

The predicted alphabet is every non-reserved vocabulary id plus UNK and EOS;
contexts are left-padded with BOS.  The highest order uses raw counts, lower
orders use continuation counts (number of distinct left extensions), and the
unigram level is interpolated with a uniform distribution over the alphabet,
which gives mass to words never seen in training.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ddeval.corpus import BOS, EOS, NUM_RESERVED, UNK, Corpus, TokenSequence
from ddeval.errors import DataError

DEFAULT_ORDER = 5
DEFAULT_DISCOUNT = 0.75


@dataclass
class NgramTable:
    """Counts for orders ``1..order``.

    ``counts[m][(h, w)]`` is the raw count for ``m == order`` and the
    continuation count otherwise; ``h`` is a tuple of ``m - 1`` ids.
    """

    order: int
    vocab_size: int
    counts: list[dict] = field(default_factory=list)
    context_totals: list[dict] = field(default_factory=list)
    context_types: list[dict] = field(default_factory=list)

    @property
    def alphabet(self) -> np.ndarray:
        return np.array([UNK, EOS, *range(NUM_RESERVED, self.vocab_size)])


def build_ngram_table(corpus: Corpus, order: int = DEFAULT_ORDER) -> NgramTable:
    if order < 1:
        raise ValueError("order must be >= 1")
    if len(corpus) == 0:
        raise DataError("cannot train a language model on an empty corpus")
    raw: dict = defaultdict(int)
    for seq in corpus:
        padded = (BOS,) * (order - 1) + tuple(seq) + (EOS,)
        for i in range(order - 1, len(padded)):
            raw[(padded[i - order + 1 : i], padded[i])] += 1
    counts: list[dict] = [dict() for _ in range(order + 1)]
    counts[order] = dict(raw)
    for m in range(order - 1, 0, -1):
        cont: dict = defaultdict(int)
        for (h, w) in counts[m + 1]:
            cont[(h[1:], w)] += 1
        counts[m] = dict(cont)
    totals: list[dict] = [dict() for _ in range(order + 1)]
    types: list[dict] = [dict() for _ in range(order + 1)]
    for m in range(1, order + 1):
        tot: dict = defaultdict(int)
        typ: dict = defaultdict(int)
        for (h, _), c in counts[m].items():
            tot[h] += c
            typ[h] += 1
        totals[m], types[m] = dict(tot), dict(typ)
    return NgramTable(order, len(corpus.vocab), counts, totals, types)


class KneserNeyLM:
    def __init__(self, table: NgramTable, discount: float = DEFAULT_DISCOUNT):
        if not 0 < discount < 1:
            raise ValueError("discount must lie in (0, 1)")
        self.table = table
        self.discount = discount
        self.alphabet_size = len(table.alphabet)

    @classmethod
    def fit(cls, corpus: Corpus, order: int = DEFAULT_ORDER, discount: float = DEFAULT_DISCOUNT) -> "KneserNeyLM":
        return cls(build_ngram_table(corpus, order), discount)

    @property
    def order(self) -> int:
        return self.table.order

    def _prob(self, w: int, h: tuple[int, ...], m: int) -> float:
        t, D = self.table, self.discount
        if m == 0:
            return 1.0 / self.alphabet_size
        h = h[len(h) - (m - 1) :] if m > 1 else ()
        total = t.context_totals[m].get(h, 0)
        if total == 0:
            return self._prob(w, h, m - 1)
        c = t.counts[m].get((h, w), 0)
        lam = D * t.context_types[m][h] / total
        return max(c - D, 0.0) / total + lam * self._prob(w, h, m - 1)

    def prob(self, w: int, context: Sequence[int]) -> float:
        """P(w | context); ``context`` is the preceding ids, BOS-padded as needed."""
        h = tuple(context)[-(self.order - 1) :] if self.order > 1 else ()
        h = (BOS,) * (self.order - 1 - len(h)) + h
        return self._prob(self._map(w), h, self.order)

    def _map(self, w: int) -> int:
        if w == EOS or w == UNK or NUM_RESERVED <= w < self.table.vocab_size:
            return w
        raise DataError(f"id {w} is not a predictable token")

    def distribution(self, context: Sequence[int]) -> np.ndarray:
        return np.array([self.prob(int(w), context) for w in self.table.alphabet])

    def sequence_logprob(self, seq: TokenSequence) -> tuple[float, int]:
        """Natural-log probability of ``seq`` + EOS and the number of predicted tokens."""
        padded = (BOS,) * (self.order - 1) + tuple(seq) + (EOS,)
        lp = 0.0
        for i in range(self.order - 1, len(padded)):
            lp += math.log(self._prob(self._map(padded[i]), padded[i - self.order + 1 : i], self.order))
        return lp, len(seq) + 1


def kn_score(lm: KneserNeyLM, scored: Corpus) -> float:
    """Mean negative log-likelihood per predicted token (EOS included), in nats."""
    if len(scored) == 0:
        raise DataError("cannot score an empty corpus")
    total, n = [], 0
    for seq in scored:
        lp, k = lm.sequence_logprob(seq)
        total.append(-lp)
        n += k
    return math.fsum(total) / n


def lm_score(real_train: Corpus, generated: Corpus, order: int = DEFAULT_ORDER,
             discount: float = DEFAULT_DISCOUNT) -> float:
    """Quality proxy: NLL of generated text under an LM fit to real text."""
    return kn_score(KneserNeyLM.fit(real_train, order, discount), generated)


def reverse_lm_score(generated: Corpus, real_test: Corpus, order: int = DEFAULT_ORDER,
                     discount: float = DEFAULT_DISCOUNT) -> float:
    """Diversity proxy: NLL of held-out real text under an LM fit to generated text."""
    return kn_score(KneserNeyLM.fit(generated, order, discount), real_test)

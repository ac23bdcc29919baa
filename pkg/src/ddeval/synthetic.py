"""Markov-chain sequence generators with exact probabilities.

A model of order ``k`` over ``V`` token types predicts, for every context of
the previous ``k`` symbols (BOS-padded), a categorical over the ``V`` tokens
plus EOS.  Generation stops at EOS or after ``max_len`` tokens; a sequence of
exactly ``max_len`` tokens carries no EOS factor, so the probabilities of all
sequences of length ``0..max_len`` sum to one.

Token ``i`` of a model corresponds to vocabulary id ``i + NUM_RESERVED``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ddeval.corpus import DEFAULT_MAX_LEN, NUM_RESERVED, UNK, Corpus, Label, TokenSequence, Vocab
from ddeval.errors import DataError

FORMAT_VERSION = 1
ROW_TOL = 1e-12


def apply_temperature(p: np.ndarray, temperature: float) -> np.ndarray:
    """Rescale categorical(s) ``p`` as ``p**(1/T)`` renormalised along the last axis.

    Zero entries stay zero.  Works on a single vector or a stack of rows.
    """
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    p = np.asarray(p, dtype=np.float64)
    if np.any(p < 0):
        raise ValueError("probabilities must be non-negative")
    if np.any(p.sum(axis=-1) == 0):
        raise ValueError("cannot apply temperature to an all-zero vector")
    if temperature == 1.0:
        return p / p.sum(axis=-1, keepdims=True)
    # work in log space so that small T does not underflow every entry
    with np.errstate(divide="ignore"):
        logits = np.log(p) / temperature
    logits = logits - logits.max(axis=-1, keepdims=True)
    q = np.exp(logits)
    return q / q.sum(axis=-1, keepdims=True)


@dataclass(frozen=True, eq=False)
class MarkovModel:
    """Order-``k`` chain; ``table[c]`` is the next-symbol distribution for context index ``c``.

    Context symbols are tokens ``0..V-1`` and BOS (``V``); outcomes are tokens
    and EOS (``V``).  A context ``(s_1, .., s_k)`` is stored at index
    ``sum(s_i * (V+1)**(k-i))``.
    """

    order: int
    vocab_size: int
    table: np.ndarray
    max_len: int = DEFAULT_MAX_LEN
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.order < 0:
            raise ValueError("order must be >= 0")
        if self.max_len < 1:
            raise ValueError("max_len must be >= 1")
        v1 = self.vocab_size + 1
        table = np.ascontiguousarray(self.table, dtype=np.float64)
        if table.shape != (v1**self.order, v1):
            raise ValueError(f"table shape {table.shape} != {(v1**self.order, v1)}")
        if np.any(table < 0) or np.any(np.abs(table.sum(axis=1) - 1.0) > ROW_TOL):
            raise ValueError("every conditional must be non-negative and sum to 1")
        table.setflags(write=False)
        object.__setattr__(self, "table", table)

    @property
    def eos(self) -> int:
        return self.vocab_size

    @property
    def bos(self) -> int:
        return self.vocab_size

    @property
    def num_contexts(self) -> int:
        return (self.vocab_size + 1) ** self.order

    @cached_property
    def start_context(self) -> int:
        return sum(self.bos * (self.vocab_size + 1) ** i for i in range(self.order))

    def next_context(self, ctx: np.ndarray | int, symbol: np.ndarray | int):
        if self.order == 0:
            return ctx * 0 if isinstance(ctx, np.ndarray) else 0
        v1 = self.vocab_size + 1
        return (ctx % (v1 ** (self.order - 1))) * v1 + symbol

    def conditional(self, context: Sequence[int]) -> np.ndarray:
        """Next-symbol distribution after ``context`` (model token indices, most recent last)."""
        ctx = self.start_context
        for s in context:
            ctx = self.next_context(ctx, s)
        return self.table[ctx]

    @cached_property
    def vocab(self) -> Vocab:
        return Vocab.synthetic(self.vocab_size)

    # -- scoring -----------------------------------------------------------

    def _symbols(self, x: TokenSequence) -> list[int]:
        if len(x) > self.max_len:
            raise DataError(f"sequence longer than max_len={self.max_len}")
        syms = [i - NUM_RESERVED for i in x]
        for i, s in zip(x, syms):
            if not 0 <= s < self.vocab_size:
                raise DataError(f"token id {i} out of range for a model over {self.vocab_size} types")
        return syms

    def logprob(self, x: TokenSequence) -> float:
        """Exact log-probability of one encoded sequence, including its EOS."""
        ctx = self.start_context
        total = 0.0
        with np.errstate(divide="ignore"):
            for s in self._symbols(x):
                total += np.log(self.table[ctx, s])
                ctx = self.next_context(ctx, s)
            if len(x) < self.max_len:
                total += np.log(self.table[ctx, self.eos])
        return float(total)

    def logprobs(self, xs: Iterable[TokenSequence]) -> np.ndarray:
        """Vectorised ``logprob`` over many sequences."""
        xs = list(xs)
        n = len(xs)
        lengths = np.array([len(x) for x in xs], dtype=np.int64)
        if n and lengths.max() > self.max_len:
            raise DataError(f"sequence longer than max_len={self.max_len}")
        width = int(lengths.max()) if n else 0
        sym = np.full((n, width), self.eos, dtype=np.int64)
        for row, x in enumerate(xs):
            sym[row, : len(x)] = x
        sym[:, :width] -= NUM_RESERVED
        inside = np.arange(width)[None, :] < lengths[:, None]
        if np.any(inside & ((sym < 0) | (sym >= self.vocab_size))):
            raise DataError("token id out of range for model")
        sym[~inside] = self.eos
        total = np.zeros(n)
        ctx = np.full(n, self.start_context, dtype=np.int64)
        with np.errstate(divide="ignore"):
            logt = np.log(self.table)
        for t in range(width + 1):
            if t < width:
                step = np.where(inside[:, t], logt[ctx, np.minimum(sym[:, t], self.vocab_size)], 0.0)
            else:
                step = np.zeros(n)
            stop = (lengths == t) & (lengths < self.max_len)
            step = np.where(stop, logt[ctx, self.eos], step)
            total += step
            if t < width:
                ctx = np.where(inside[:, t], self.next_context(ctx, sym[:, t]), ctx)
        return total

    # -- sampling ----------------------------------------------------------

    @cached_property
    def _cumulative(self) -> np.ndarray:
        cum = np.cumsum(self.table, axis=1)
        cum[:, -1] = 1.0
        return cum

    def sample_symbols(self, n: int, rng: np.random.Generator) -> list[tuple[int, ...]]:
        """Draw ``n`` ancestral samples as tuples of model token indices."""
        if n < 1:
            raise ValueError("n must be >= 1")
        cum = self._cumulative
        ctx = np.full(n, self.start_context, dtype=np.int64)
        alive = np.ones(n, dtype=bool)
        out = np.full((n, self.max_len), -1, dtype=np.int64)
        for t in range(self.max_len):
            u = rng.random(n)
            draw = np.full(n, self.eos, dtype=np.int64)
            live_idx = np.flatnonzero(alive)
            live_ctx = ctx[live_idx]
            for c in np.unique(live_ctx):
                rows = live_idx[live_ctx == c]
                draw[rows] = np.searchsorted(cum[c], u[rows], side="right")
            draw = np.minimum(draw, self.eos)
            alive &= draw != self.eos
            out[alive, t] = draw[alive]
            ctx = np.where(alive, self.next_context(ctx, np.where(alive, draw, 0)), ctx)
            if not alive.any():
                break
        return [tuple(row[row >= 0].tolist()) for row in out]

    def sample(self, n: int, rng: np.random.Generator | int, vocab: Vocab | None = None) -> Corpus:
        if not isinstance(rng, np.random.Generator):
            rng = np.random.default_rng(rng)
        vocab = vocab or self.vocab
        if vocab.num_types != self.vocab_size:
            raise DataError("vocabulary size does not match the model")
        seqs = [tuple(s + NUM_RESERVED for s in x) for x in self.sample_symbols(n, rng)]
        return Corpus(seqs, vocab, Label.GENERATED)

    def marginal_token_frequencies(self) -> np.ndarray:
        """Expected share of each token among all emitted tokens (EOS excluded).

        Computed by propagating the context-occupancy distribution forward
        ``max_len`` steps.
        """
        occ = np.zeros(self.num_contexts)
        occ[self.start_context] = 1.0
        expected = np.zeros(self.vocab_size)
        all_ctx = np.arange(self.num_contexts)
        for _ in range(self.max_len):
            emit = occ[:, None] * self.table[:, : self.vocab_size]
            expected += emit.sum(axis=0)
            nxt = np.zeros_like(occ)
            for s in range(self.vocab_size):
                np.add.at(nxt, self.next_context(all_ctx, s), emit[:, s])
            occ = nxt
        return expected / expected.sum()

    # -- persistence -------------------------------------------------------

    def save(self, path: str | Path) -> None:
        header = {
            "format": "ddeval-markov",
            "version": FORMAT_VERSION,
            "order": self.order,
            "vocab_size": self.vocab_size,
            "max_len": self.max_len,
            "meta": self.meta,
        }
        with open(path, "wb") as fh:
            np.savez(fh, header=np.array(json.dumps(header, sort_keys=True)), table=np.asarray(self.table))

    @classmethod
    def load(cls, path: str | Path) -> "MarkovModel":
        with np.load(path, allow_pickle=False) as data:
            header = json.loads(str(data["header"]))
            table = data["table"].copy()
        if header.get("format") != "ddeval-markov":
            raise DataError(f"{path}: not a Markov model file")
        if header.get("version") != FORMAT_VERSION:
            raise DataError(f"{path}: unsupported model file version {header.get('version')}")
        return cls(header["order"], header["vocab_size"], table, header["max_len"], header.get("meta", {}))

    @classmethod
    def random(
        cls,
        vocab_size: int,
        order: int = 1,
        max_len: int = DEFAULT_MAX_LEN,
        concentration: float = 1.0,
        eos_weight: float = 1.0,
        seed: int = 0,
    ) -> "MarkovModel":
        """Chain with Dirichlet-distributed rows; ``eos_weight`` scales the EOS pseudo-count."""
        rng = np.random.default_rng(seed)
        v1 = vocab_size + 1
        alpha = np.full(v1, concentration)
        alpha[-1] *= eos_weight
        table = rng.dirichlet(alpha, size=v1**order)
        meta = {"kind": "random", "concentration": concentration, "eos_weight": eos_weight, "seed": seed}
        return cls(order, vocab_size, table, max_len, meta)

    @classmethod
    def uniform(cls, vocab_size: int, order: int = 0, max_len: int = DEFAULT_MAX_LEN) -> "MarkovModel":
        v1 = vocab_size + 1
        return cls(order, vocab_size, np.full((v1**order, v1), 1.0 / v1), max_len, {"kind": "uniform"})


def fit_markov(
    corpus: Corpus,
    order: int,
    alpha: float = 1.0,
    max_len: int | None = None,
    vocab_size: int | None = None,
) -> MarkovModel:
    """Add-``alpha`` estimate ``(count(c, w) + alpha) / (count(c) + alpha * (V + 1))``.

    Sequences of exactly ``max_len`` tokens are treated as truncated and
    contribute no EOS count.
    """
    if order < 0:
        raise ValueError("order must be >= 0")
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    if len(corpus) == 0:
        raise DataError("cannot fit a model to an empty corpus")
    V = corpus.vocab.num_types if vocab_size is None else vocab_size
    if max_len is None:
        max_len = max(DEFAULT_MAX_LEN, max(len(s) for s in corpus))
    v1 = V + 1
    counts = np.zeros((v1**order, v1))
    shell = MarkovModel(order, V, np.full((v1**order, v1), 1.0 / v1), max_len)
    for seq in corpus:
        if UNK in seq:
            raise DataError("corpus contains UNK tokens; rebuild the vocabulary with min_count=1")
        syms = shell._symbols(seq)
        ctx = shell.start_context
        for s in syms:
            counts[ctx, s] += 1
            ctx = shell.next_context(ctx, s)
        if len(syms) < max_len:
            counts[ctx, V] += 1
    table = (counts + alpha) / (counts.sum(axis=1, keepdims=True) + alpha * v1)
    return MarkovModel(order, V, table, max_len, {"kind": "fit", "alpha": alpha, "num_sequences": len(corpus)})


@dataclass(frozen=True, eq=False)
class GeneratorSpec:
    """A base chain, optionally mixed with a noise chain and temperature-scaled.

    Every conditional is ``apply_temperature((1 - lam) * base + lam * noise, T)``;
    ``sample`` and ``logprob`` both go through ``resolved``.
    """

    base: MarkovModel
    temperature: float = 1.0
    noise: MarkovModel | None = None
    lam: float = 0.0
    training_fraction: float | None = None
    name: str = ""

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lam must lie in [0, 1]")
        if self.lam > 0 and self.noise is None:
            raise ValueError("lam > 0 requires a noise model")
        if self.training_fraction is not None and not 0 < self.training_fraction <= 1:
            raise ValueError("training_fraction must lie in (0, 1]")
        if self.noise is not None:
            _check_compatible(self.base, self.noise)

    @cached_property
    def resolved(self) -> MarkovModel:
        table = self.base.table
        if self.noise is not None and self.lam > 0:
            table = (1.0 - self.lam) * table + self.lam * self.noise.table
        if self.temperature != 1.0:
            table = apply_temperature(table, self.temperature)
        if table is self.base.table and not self.base.meta.get("transform"):
            return self.base
        meta = dict(self.base.meta, transform={"temperature": self.temperature, "lam": self.lam})
        return MarkovModel(self.base.order, self.base.vocab_size, table, self.base.max_len, meta)

    def with_temperature(self, temperature: float) -> "GeneratorSpec":
        return GeneratorSpec(self.base, temperature, self.noise, self.lam, self.training_fraction, self.name)

    @property
    def vocab_size(self) -> int:
        return self.base.vocab_size

    @property
    def max_len(self) -> int:
        return self.base.max_len

    def logprob(self, x: TokenSequence) -> float:
        return self.resolved.logprob(x)

    def logprobs(self, xs: Iterable[TokenSequence]) -> np.ndarray:
        return self.resolved.logprobs(xs)

    def sample(self, n: int, rng: np.random.Generator | int, vocab: Vocab | None = None) -> Corpus:
        return self.resolved.sample(n, rng, vocab)

    def describe(self) -> dict:
        return {
            "name": self.name,
            "temperature": self.temperature,
            "lam": self.lam,
            "training_fraction": self.training_fraction,
            "order": self.base.order,
        }


def _check_compatible(a: MarkovModel, b: MarkovModel) -> None:
    if a.vocab_size != b.vocab_size:
        raise DataError(f"vocabulary mismatch: {a.vocab_size} vs {b.vocab_size} types")
    if a.order != b.order:
        raise DataError(f"order mismatch: {a.order} vs {b.order}")
    if a.max_len != b.max_len:
        raise DataError(f"max_len mismatch: {a.max_len} vs {b.max_len}")


def interpolate(base: MarkovModel, noise: MarkovModel, lam: float, name: str = "") -> GeneratorSpec:
    """Mix every conditional as ``(1 - lam) * base + lam * noise``."""
    _check_compatible(base, noise)
    return GeneratorSpec(base, noise=noise, lam=lam, name=name or f"lam={lam:g}")


def sample(spec: GeneratorSpec | MarkovModel, n: int, seed: int, vocab: Vocab | None = None) -> Corpus:
    return spec.sample(n, np.random.default_rng(seed), vocab)


def logprob(spec: GeneratorSpec | MarkovModel, x: TokenSequence) -> float:
    return spec.logprob(x)


def lambda_ladder(base: MarkovModel, noise: MarkovModel, lams: Sequence[float]) -> list[GeneratorSpec]:
    return [interpolate(base, noise, lam) for lam in lams]


def fraction_ladder(
    corpus: Corpus,
    fractions: Sequence[float],
    order: int,
    alpha: float = 1.0,
    max_len: int | None = None,
    name: str = "",
) -> list[GeneratorSpec]:
    """Fit one chain per leading slice of ``corpus``; larger slices contain smaller ones."""
    family = []
    for frac in fractions:
        n = max(1, int(round(frac * len(corpus))))
        model = fit_markov(corpus.subset(range(n)), order, alpha, max_len=max_len)
        family.append(GeneratorSpec(model, training_fraction=frac, name=f"{name}{frac:g}"))
    return family

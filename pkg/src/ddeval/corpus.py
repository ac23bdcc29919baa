"""Tokenization, vocabularies, integer-encoded corpora and dataset splits."""

from __future__ import annotations

import enum
import logging
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ddeval.errors import DataError

log = logging.getLogger(__name__)

PAD, UNK, BOS, EOS = 0, 1, 2, 3
RESERVED = ("<pad>", "<unk>", "<bos>", "<eos>")
NUM_RESERVED = len(RESERVED)
DEFAULT_MAX_LEN = 52

TokenSequence = tuple[int, ...]


class Label(enum.Enum):
    REAL = "real"
    GENERATED = "generated"


class OverLengthPolicy(enum.Enum):
    SKIP = "skip"
    TRUNCATE = "truncate"
    ERROR = "error"


class OverLengthError(DataError):
    pass


def tokenize(line: str, lowercase: bool = False) -> list[str]:
    """Split a line on runs of whitespace."""
    if lowercase:
        line = line.lower()
    return line.split()


@dataclass(frozen=True)
class Vocab:
    """Token <-> id map. Ids 0-3 are reserved for PAD, UNK, BOS, EOS."""

    tokens: tuple[str, ...]
    token_to_id: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        mapping = {tok: i + NUM_RESERVED for i, tok in enumerate(self.tokens)}
        if len(mapping) != len(self.tokens):
            raise DataError("duplicate tokens in vocabulary")
        if any(tok in RESERVED for tok in mapping):
            raise DataError("vocabulary may not contain reserved symbols")
        object.__setattr__(self, "token_to_id", mapping)

    @property
    def id_to_token(self) -> list[str]:
        return list(RESERVED) + list(self.tokens)

    def __len__(self) -> int:
        return NUM_RESERVED + len(self.tokens)

    @property
    def num_types(self) -> int:
        return len(self.tokens)

    def encode(self, tokens: Iterable[str]) -> TokenSequence:
        return tuple(self.token_to_id.get(tok, UNK) for tok in tokens)

    def decode(self, ids: Iterable[int]) -> list[str]:
        table = self.id_to_token
        return [table[i] for i in ids]

    @classmethod
    def synthetic(cls, num_types: int) -> "Vocab":
        """Vocabulary ``w0 .. w{n-1}`` used by generated Markov corpora."""
        return cls(tuple(f"w{i}" for i in range(num_types)))

    def save(self, path: str | Path) -> None:
        # line i holds the token with id i + NUM_RESERVED
        Path(path).write_text("".join(tok + "\n" for tok in self.tokens), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocab":
        text = Path(path).read_text(encoding="utf-8")
        return cls(tuple(text.split("\n")[:-1]) if text else ())


def build_vocab(lines: Iterable[str], min_count: int = 1, lowercase: bool = False) -> Vocab:
    """Frequency-ordered vocabulary; ties are broken lexicographically."""
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    counts: Counter[str] = Counter()
    n_lines = 0
    for line in lines:
        n_lines += 1
        counts.update(tokenize(line, lowercase))
    if not counts:
        raise DataError("cannot build a vocabulary from an empty corpus")
    # reserved spellings in the text are treated as unknown words
    kept = sorted((tok for tok, c in counts.items() if c >= min_count and tok not in RESERVED),
                  key=lambda t: (-counts[t], t))
    log.debug("vocab: %d lines, %d types, %d kept", n_lines, len(counts), len(kept))
    return Vocab(tuple(kept))


@dataclass
class Corpus:
    sequences: list[TokenSequence]
    vocab: Vocab
    label: Label = Label.REAL
    skipped: int = 0

    def __len__(self) -> int:
        return len(self.sequences)

    def __iter__(self):
        return iter(self.sequences)

    def subset(self, indices: Sequence[int]) -> "Corpus":
        return Corpus([self.sequences[i] for i in indices], self.vocab, self.label)

    def num_tokens(self) -> int:
        return sum(len(s) for s in self.sequences)

    def validate(self, max_len: int | None = None) -> None:
        size = len(self.vocab)
        for seq in self.sequences:
            if max_len is not None and len(seq) > max_len:
                raise DataError(f"sequence of length {len(seq)} exceeds max_len={max_len}")
            for i in seq:
                if not NUM_RESERVED <= i < size and i != UNK:
                    raise DataError(f"token id {i} invalid for vocabulary of size {size}")

    def to_lines(self) -> list[str]:
        table = self.vocab.id_to_token
        return [" ".join(table[i] for i in seq) for seq in self.sequences]

    def save(self, path: str | Path) -> None:
        Path(path).write_text("".join(line + "\n" for line in self.to_lines()), encoding="utf-8")


def encode_lines(
    lines: Iterable[str],
    vocab: Vocab,
    label: Label = Label.REAL,
    max_len: int = DEFAULT_MAX_LEN,
    policy: OverLengthPolicy = OverLengthPolicy.SKIP,
    keep_empty: bool = False,
    lowercase: bool = False,
) -> Corpus:
    """Encode raw lines under ``vocab``.

    Empty lines and (by default) lines longer than ``max_len`` tokens are
    skipped; ``Corpus.skipped`` counts both.  ``keep_empty`` retains empty
    lines as zero-length sequences, which generated corpora can contain.
    """
    sequences: list[TokenSequence] = []
    skipped = 0
    for lineno, line in enumerate(lines, 1):
        toks = tokenize(line, lowercase)
        if not toks and not keep_empty:
            skipped += 1
            continue
        if len(toks) > max_len:
            if policy is OverLengthPolicy.ERROR:
                raise OverLengthError(f"line {lineno}: {len(toks)} tokens > max_len={max_len}")
            if policy is OverLengthPolicy.SKIP:
                skipped += 1
                continue
            toks = toks[:max_len]
        sequences.append(vocab.encode(toks))
    if skipped:
        log.warning("skipped %d empty or over-length lines", skipped)
    return Corpus(sequences, vocab, label, skipped)


def read_lines(path: str | Path) -> list[str]:
    with open(path, encoding="utf-8") as fh:
        return [line.rstrip("\n") for line in fh]


def load_corpus(path: str | Path, vocab: Vocab | None = None, **kwargs) -> Corpus:
    """Read a one-sentence-per-line file; builds a vocabulary if none is given."""
    lines = read_lines(path)
    if vocab is None:
        vocab = build_vocab(lines, lowercase=kwargs.get("lowercase", False))
    return encode_lines(lines, vocab, **kwargs)


class Ordering(enum.Enum):
    SEQUENTIAL = "sequential"
    SHUFFLED = "shuffled"


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: Fraction = Fraction(8, 10)
    dev_fraction: Fraction = Fraction(1, 10)
    test_fraction: Fraction = Fraction(1, 10)
    ordering: Ordering = Ordering.SEQUENTIAL
    seed: int = 0

    def __post_init__(self):
        fracs = [Fraction(f).limit_denominator(10**9) for f in self.fractions]
        if any(f <= 0 for f in fracs):
            raise ValueError("split fractions must be positive")
        if sum(fracs) != 1:
            raise ValueError(f"split fractions must sum to 1, got {sum(fracs)}")
        for name, f in zip(("train_fraction", "dev_fraction", "test_fraction"), fracs):
            object.__setattr__(self, name, f)

    @property
    def fractions(self) -> tuple[Fraction, Fraction, Fraction]:
        return (self.train_fraction, self.dev_fraction, self.test_fraction)

    def sizes(self, n: int) -> tuple[int, int, int]:
        n_train = int(self.train_fraction * n)
        n_dev = int(self.dev_fraction * n)
        return n_train, n_dev, n - n_train - n_dev


def split_indices(n: int, spec: SplitSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    n_train, n_dev, n_test = spec.sizes(n)
    if min(n_train, n_dev, n_test) <= 0:
        raise DataError(f"split of {n} items into {(n_train, n_dev, n_test)} leaves an empty part")
    order = np.arange(n)
    if spec.ordering is Ordering.SHUFFLED:
        order = np.random.default_rng(spec.seed).permutation(n)
    return order[:n_train], order[n_train : n_train + n_dev], order[n_train + n_dev :]


def split_corpus(corpus: Corpus, spec: SplitSpec = SplitSpec()) -> tuple[Corpus, Corpus, Corpus]:
    """Partition into (train, dev, test); sequential splits take contiguous blocks."""
    return tuple(corpus.subset(idx) for idx in split_indices(len(corpus), spec))

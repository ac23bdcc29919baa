"""Frechet embedding distance between two corpora."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ddeval.corpus import Corpus, TokenSequence
from ddeval.errors import DataError, NumericError

COV_EPS = 1e-6


@dataclass
class EmbeddingModel:
    """Sentence vector = mean of fixed random token vectors (zero for an empty sentence).

    Any object with an ``embed(corpus) -> (n, d) array`` method can stand in.
    """

    vocab_size: int
    dim: int = 128
    seed: int = 0
    table: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.table = np.random.default_rng(self.seed).normal(0.0, 1.0, (self.vocab_size, self.dim))

    def embed_one(self, seq: TokenSequence) -> np.ndarray:
        if not seq:
            return np.zeros(self.dim)
        return self.table[list(seq)].mean(axis=0)

    def embed(self, corpus: Corpus) -> np.ndarray:
        return np.stack([self.embed_one(s) for s in corpus]) if len(corpus) else np.zeros((0, self.dim))


@dataclass
class GaussianFit:
    mean: np.ndarray
    cov: np.ndarray

    @classmethod
    def from_samples(cls, x: np.ndarray, eps: float = COV_EPS) -> "GaussianFit":
        if x.shape[0] < 2:
            raise DataError("need at least two samples to fit a covariance")
        cov = np.cov(x, rowvar=False, ddof=1)
        cov = np.atleast_2d(cov)
        cov = 0.5 * (cov + cov.T) + eps * np.eye(cov.shape[0])
        return cls(x.mean(axis=0), cov)


def _sqrt_psd(a: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(0.5 * (a + a.T))
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


def frechet_distance(a: GaussianFit, b: GaussianFit) -> float:
    """``|mu_a - mu_b|^2 + tr(S_a + S_b - 2 (S_a S_b)^(1/2))``.

    The trace of the cross term is taken from the eigenvalues of the
    symmetric matrix ``S_a^(1/2) S_b S_a^(1/2)``; negative round-off
    eigenvalues are clamped to zero.
    """
    if a.cov.shape != b.cov.shape:
        raise DataError("covariance shapes differ")
    root_a = _sqrt_psd(a.cov)
    middle = root_a @ b.cov @ root_a
    vals = np.linalg.eigvalsh(0.5 * (middle + middle.T))
    if not np.all(np.isfinite(vals)):
        raise NumericError("non-finite eigenvalues in Frechet distance")
    cross = np.sqrt(np.clip(vals, 0.0, None)).sum()
    diff = a.mean - b.mean
    value = diff @ diff + np.trace(a.cov) + np.trace(b.cov) - 2.0 * cross
    return float(max(value, 0.0))


def fed(corpus_a: Corpus, corpus_b: Corpus, emb: EmbeddingModel | None = None, eps: float = COV_EPS) -> float:
    if len(corpus_a) < 2 or len(corpus_b) < 2:
        raise DataError("FED needs at least two sequences per corpus")
    emb = emb or EmbeddingModel(len(corpus_a.vocab))
    return frechet_distance(GaussianFit.from_samples(emb.embed(corpus_a), eps),
                            GaussianFit.from_samples(emb.embed(corpus_b), eps))

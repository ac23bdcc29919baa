"""Ground-truth distributional discrepancy for distributions with exact densities.

``tv_exact`` sums ``|p(x) - q(x)| / 2`` over every sequence of length
``0..max_len``.  ``indicator_form_exact`` evaluates the same quantity through
the four indicator expectations split on ``z = p / (p + q) >= 0.5``, and
``tv_mc`` estimates those expectations from samples.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ddeval.errors import DataError
from ddeval.synthetic import GeneratorSpec, MarkovModel

DEFAULT_BUDGET = 10**7
DEFAULT_MC_SAMPLES = 100_000

Distribution = GeneratorSpec | MarkovModel


@dataclass(frozen=True)
class SequenceSpace:
    vocab_size: int
    max_len: int
    budget: int = DEFAULT_BUDGET

    @property
    def size_bound(self) -> int:
        return (self.vocab_size + 1) ** self.max_len

    @property
    def enumerable(self) -> bool:
        return self.size_bound <= self.budget

    @classmethod
    def of(cls, dist: Distribution, budget: int = DEFAULT_BUDGET) -> "SequenceSpace":
        return cls(dist.vocab_size, dist.max_len, budget)


@dataclass
class DdScore:
    value: float
    method: str  # "enumerated" | "monte_carlo" | "classifier"
    n: int | None = None
    std_err: float | None = None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if not -1e-12 <= self.value <= 1 + 1e-12:
            raise ValueError(f"DD value {self.value} outside [0, 1]")
        if self.method == "monte_carlo" and self.std_err is None:
            raise ValueError("Monte-Carlo scores carry a standard error")

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "method": self.method,
            "n": self.n,
            "std_err": self.std_err,
            "provenance": self.provenance,
        }


def as_markov(dist: Distribution) -> MarkovModel:
    if isinstance(dist, GeneratorSpec):
        return dist.resolved
    if isinstance(dist, MarkovModel):
        return dist
    raise DataError(f"{type(dist).__name__} does not expose exact probabilities")


def _check_same_space(p: MarkovModel, q: MarkovModel) -> None:
    if p.vocab_size != q.vocab_size or p.max_len != q.max_len:
        raise DataError("distributions are defined on different sequence spaces")


def enumerate_probs(model: MarkovModel, budget: int = DEFAULT_BUDGET) -> np.ndarray:
    """Probabilities of every sequence, shortest first, lexicographic within a length.

    The ordering matches ``enumerate_sequences(model.vocab_size, model.max_len)``.
    """
    space = SequenceSpace.of(model, budget)
    if not space.enumerable:
        raise DataError(
            f"sequence space of size ~{space.size_bound} exceeds the enumeration budget; use tv_mc"
        )
    V, L = model.vocab_size, model.max_len
    table = model.table
    prefix = np.ones(1)
    ctx = np.array([model.start_context], dtype=np.int64)
    chunks = []
    for length in range(L + 1):
        if length < L:
            chunks.append(prefix * table[ctx, model.eos])
            prefix = (prefix[:, None] * table[ctx, :V]).ravel()
            ctx = model.next_context(ctx[:, None], np.arange(V)[None, :]).ravel()
        else:
            chunks.append(prefix)
    return np.concatenate(chunks)


def enumerate_sequences(vocab_size: int, max_len: int) -> list[tuple[int, ...]]:
    """Every token-index sequence of length ``0..max_len`` in ``enumerate_probs`` order."""
    out: list[tuple[int, ...]] = []
    for length in range(max_len + 1):
        out.extend(itertools.product(range(vocab_size), repeat=length))
    return out


def tv_exact(p: Distribution, q: Distribution, space: SequenceSpace | None = None) -> DdScore:
    """Total variation by enumeration of the sequence space."""
    pm, qm = as_markov(p), as_markov(q)
    _check_same_space(pm, qm)
    budget = space.budget if space is not None else DEFAULT_BUDGET
    pp, qq = enumerate_probs(pm, budget), enumerate_probs(qm, budget)
    value = 0.5 * math.fsum(np.abs(pp - qq))
    return DdScore(min(value, 1.0), "enumerated", n=len(pp), provenance={"budget": budget})


def indicator_form_exact(p: Distribution, q: Distribution, budget: int = DEFAULT_BUDGET) -> float:
    """Weighted-enumeration value of the four indicator expectations.

    With ``z = p / (p + q)``::

        1/2 [ P_p(z >= .5) + P_q(z < .5) - P_q(z >= .5) - P_p(z < .5) ]

    Outcomes with ``p == q`` (``z == 0.5``) fall on the ``>=`` side.
    """
    pm, qm = as_markov(p), as_markov(q)
    _check_same_space(pm, qm)
    pp, qq = enumerate_probs(pm, budget), enumerate_probs(qm, budget)
    total = pp + qq
    with np.errstate(invalid="ignore", divide="ignore"):
        z = np.where(total > 0, pp / total, 0.5)
    hi = z >= 0.5
    terms = [pp[hi].sum(), qq[~hi].sum(), -qq[hi].sum(), -pp[~hi].sum()]
    return 0.5 * math.fsum(terms)


def discriminator_branch(logp: np.ndarray, logq: np.ndarray) -> np.ndarray:
    """``z >= 0.5`` for the optimal discriminator, decided on log densities."""
    return np.asarray(logp) >= np.asarray(logq)


def tv_mc(p: Distribution, q: Distribution, n: int = DEFAULT_MC_SAMPLES, seed: int = 0) -> DdScore:
    """Monte-Carlo estimate of TV from the optimal discriminator's accuracy.

    ``n`` samples are drawn from each side.  The estimate equals
    ``acc_p + acc_q - 1`` where ``acc_p`` is the share of p-samples with
    ``z >= 0.5`` and ``acc_q`` the share of q-samples with ``z < 0.5``.
    """
    if n < 1000:
        raise ValueError("tv_mc needs n >= 1000 samples per side")
    for d in (p, q):
        if not hasattr(d, "logprobs"):
            raise DataError(f"{type(d).__name__} does not expose exact log-probabilities")
    ss = np.random.SeedSequence(seed)
    rng_p, rng_q = (np.random.default_rng(s) for s in ss.spawn(2))
    xp = p.sample(n, rng_p).sequences
    xq = q.sample(n, rng_q).sequences
    acc_p = discriminator_branch(p.logprobs(xp), q.logprobs(xp)).mean()
    acc_q = (~discriminator_branch(p.logprobs(xq), q.logprobs(xq))).mean()
    value = float(np.clip(acc_p + acc_q - 1.0, 0.0, 1.0))
    std_err = math.sqrt((acc_p * (1 - acc_p) + acc_q * (1 - acc_q)) / n)
    return DdScore(value, "monte_carlo", n=n, std_err=std_err, provenance={"seed": seed})


def tv(p: Distribution, q: Distribution, budget: int = DEFAULT_BUDGET, n_mc: int = DEFAULT_MC_SAMPLES,
       seed: int = 0) -> DdScore:
    """Exact TV when the space is enumerable, Monte-Carlo otherwise."""
    if SequenceSpace.of(p, budget).enumerable:
        return tv_exact(p, q, SequenceSpace.of(p, budget))
    return tv_mc(p, q, n_mc, seed)


def gold_scores(family: Sequence[Distribution], reference: Distribution, budget: int = DEFAULT_BUDGET,
                n_mc: int = DEFAULT_MC_SAMPLES, seed: int = 0) -> list[DdScore]:
    if not family:
        raise ValueError("empty generator family")
    return [tv(reference, g, budget, n_mc, seed) for g in family]


def gold_rank(family: Sequence[Distribution], reference: Distribution, budget: int = DEFAULT_BUDGET,
              n_mc: int = DEFAULT_MC_SAMPLES, seed: int = 0) -> list[int]:
    """Family indices ordered best (smallest TV to ``reference``) first; ties keep family order."""
    scores = gold_scores(family, reference, budget, n_mc, seed)
    return sorted(range(len(family)), key=lambda i: (scores[i].value, i))

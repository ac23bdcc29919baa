import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ddeval.baselines import (
    EmbeddingModel, GaussianFit, KneserNeyLM, bleu, build_ngram_table, fed, frechet_distance, kn_score,
    lm_score, reverse_lm_score, self_bleu, sentence_bleu,
)
from ddeval.baselines.bleu import SMOOTH_EPS
from ddeval.corpus import BOS, EOS, UNK, Corpus, DataError, Vocab
from ddeval.synthetic import MarkovModel

VOCAB = Vocab(("a", "b", "c", "d", "e"))


def corpus(*lines: str, vocab: Vocab = VOCAB) -> Corpus:
    return Corpus([vocab.encode(line.split()) for line in lines], vocab)


# -- BLEU ----------------------------------------------------------------------------

def test_bleu_identity():
    refs = corpus("a b c d e", "b c")
    assert sentence_bleu(refs.sequences[0], refs.sequences) == 1.0
    assert bleu(corpus("a b c d e"), refs) == 1.0


def test_bleu_disjoint_is_floor():
    score = bleu(corpus("d e d e"), corpus("a b c a", "b c a b"))
    assert score == pytest.approx(SMOOTH_EPS, rel=1e-9)


def test_bleu2_hand_fixture():
    refs = corpus("a b c d", "a b b", "c d e")
    cands = corpus("a b c e", "d d")
    # "a b c e": unigrams all matched (4/4); bigrams ab, bc matched, ce not (2/3); closest ref length 4
    first = math.sqrt(1.0 * 2 / 3)
    # "d d": d clipped to 1 (1/2); bigram dd unmatched -> floor; closest ref length 3 -> BP exp(1 - 3/2)
    second = math.exp(1 - 3 / 2) * math.sqrt(0.5 * SMOOTH_EPS)
    assert bleu(cands, refs, max_n=2) == pytest.approx((first + second) / 2, abs=1e-12)


def test_bleu_is_directional():
    a, b = corpus("a b", "a b c"), corpus("a b c d e")
    assert bleu(a, b) != bleu(b, a)


def test_bleu_errors():
    with pytest.raises(ValueError):
        bleu(corpus("a"), corpus("a"), max_n=0)
    with pytest.raises(DataError):
        bleu(corpus(), corpus("a"))


def test_self_bleu_identical_sentences():
    assert self_bleu(corpus(*["a b c d e"] * 4)) == 1.0


def test_self_bleu_disjoint_sentences():
    assert self_bleu(corpus("a b", "c d", "e e")) == pytest.approx(SMOOTH_EPS, rel=1e-9)


def test_self_bleu2_hand_fixture():
    # "a b c" vs others: all unigrams and bigrams ab (in "a b d"), bc (in "b c d") found -> 1
    # "a b d": bigram bd unmatched -> sqrt(1 * 1/2); "b c d": bigram cd unmatched -> same
    expected = (1 + 2 * math.sqrt(0.5)) / 3
    assert self_bleu(corpus("a b c", "a b d", "b c d"), max_n=2) == pytest.approx(expected, abs=1e-12)


def _naive_self_bleu(c: Corpus, max_n: int) -> float:
    seqs = c.sequences
    scores = [sentence_bleu(s, seqs[:i] + seqs[i + 1 :], max_n) for i, s in enumerate(seqs)]
    return math.fsum(scores) / len(scores)


@given(st.lists(st.lists(st.sampled_from("abcde"), max_size=7), min_size=2, max_size=12), st.integers(1, 5))
def test_self_bleu_matches_leave_one_out(lines, max_n):
    c = corpus(*(" ".join(line) for line in lines))
    assert self_bleu(c, max_n) == pytest.approx(_naive_self_bleu(c, max_n), abs=1e-12)


def test_self_bleu_permutation_invariant():
    m = MarkovModel.random(5, 1, 8, concentration=0.5, seed=0)
    c = m.sample(300, 0)
    perm = np.random.default_rng(1).permutation(len(c))
    assert self_bleu(c, eval_cap=None) == pytest.approx(self_bleu(c.subset(perm), eval_cap=None), abs=1e-12)


def test_self_bleu_cap_is_seeded():
    c = MarkovModel.random(5, 1, 8, seed=0).sample(400, 0)
    assert self_bleu(c, eval_cap=100, seed=3) == self_bleu(c, eval_cap=100, seed=3)


def test_self_bleu_singleton():
    with pytest.raises(DataError):
        self_bleu(corpus("a b"))


# -- Kneser-Ney ------------------------------------------------------------------------

KN_VOCAB = Vocab(("a", "b", "c"))
A, B, C = 4, 5, 6


def kn_fixture() -> KneserNeyLM:
    return KneserNeyLM.fit(corpus("a b", "a c", "b c", "a b", vocab=KN_VOCAB), order=2, discount=0.75)


def test_kn_hand_computed_bigrams():
    lm = kn_fixture()
    D = 0.75
    # bigram types: <s>a x3, <s>b, ab x2, ac, b</s> x2, bc, c</s> x2  -> 7 types
    # left-context counts: a {<s>} 1, b {<s>,a} 2, c {a,b} 2, </s> {b,c} 2; 4 word types; alphabet of 5
    floor = D * 4 / 7 / 5
    uni = {A: (1 - D) / 7 + floor, B: (2 - D) / 7 + floor, C: (2 - D) / 7 + floor, EOS: (2 - D) / 7 + floor,
           UNK: floor}
    assert math.fsum(uni.values()) == pytest.approx(1.0, abs=1e-15)
    # after a: ab x2, ac x1 (3 tokens, 2 types)
    assert lm.prob(B, [A]) == pytest.approx((2 - D) / 3 + D * 2 / 3 * uni[B], abs=1e-10)
    assert lm.prob(UNK, [A]) == pytest.approx(D * 2 / 3 * uni[UNK], abs=1e-10)
    # after c: only c</s> x2
    assert lm.prob(EOS, [C]) == pytest.approx((2 - D) / 2 + D * 1 / 2 * uni[EOS], abs=1e-10)
    # sentence start: <s>a x3, <s>b x1
    assert lm.prob(A, []) == pytest.approx((3 - D) / 4 + D * 2 / 4 * uni[A], abs=1e-10)
    # after b: b</s> x2, bc x1
    assert lm.prob(C, [B]) == pytest.approx((1 - D) / 3 + D * 2 / 3 * uni[C], abs=1e-10)
    # unseen context backs off to the unigram level
    assert lm.prob(A, [UNK]) == pytest.approx(uni[A], abs=1e-10)


def test_kn_sequence_logprob():
    lm = kn_fixture()
    lp, n = lm.sequence_logprob((A, B))
    assert n == 3
    assert lp == pytest.approx(math.log(lm.prob(A, []) * lm.prob(B, [A]) * lm.prob(EOS, [A, B])), abs=1e-12)


def test_kn_table_counts_are_consistent():
    table = build_ngram_table(MarkovModel.random(4, 2, 6, seed=1).sample(200, 0), order=3)
    for m in range(1, 4):
        sums: dict = {}
        for (h, _), c in table.counts[m].items():
            sums[h] = sums.get(h, 0) + c
        assert sums == table.context_totals[m]


@pytest.mark.parametrize("order", [1, 2, 3, 5])
def test_kn_normalisation(order):
    train = MarkovModel.random(6, 2, 8, concentration=0.3, seed=order).sample(300, 0)
    lm = KneserNeyLM.fit(train, order)
    rng = np.random.default_rng(order)
    symbols = [BOS, UNK, *range(4, 10)]
    for _ in range(100):
        ctx = [int(s) for s in rng.choice(symbols, size=rng.integers(0, order + 1))]
        assert abs(math.fsum(lm.distribution(ctx)) - 1.0) <= 1e-9


def test_kn_prefers_real_order_to_shuffled_tokens():
    train = MarkovModel.random(10, 2, 10, concentration=0.1, seed=5).sample(500, 0)
    rng = np.random.default_rng(0)
    tokens = rng.permutation(np.concatenate([np.array(s) for s in train.sequences]))
    shuffled, pos = [], 0
    for s in train.sequences:
        shuffled.append(tuple(int(t) for t in tokens[pos : pos + len(s)]))
        pos += len(s)
    lm = KneserNeyLM.fit(train, 5)
    assert kn_score(lm, train) < kn_score(lm, Corpus(shuffled, train.vocab))


def test_lm_and_reverse_lm_directions():
    real = MarkovModel.random(5, 1, 8, concentration=0.3, seed=1)
    real_train, real_test = real.sample(500, 0), real.sample(200, 1)
    close = real.sample(300, 2)
    far = MarkovModel.uniform(5, 1, 8).sample(300, 3)
    assert lm_score(real_train, close) < lm_score(real_train, far)
    assert reverse_lm_score(close, real_test) < reverse_lm_score(far, real_test)


def test_kn_errors():
    lm = kn_fixture()
    with pytest.raises(DataError):
        kn_score(lm, corpus(vocab=KN_VOCAB))
    with pytest.raises(DataError):
        lm.prob(99, [])
    with pytest.raises(ValueError):
        KneserNeyLM(lm.table, discount=1.0)


# -- FED -------------------------------------------------------------------------------

def test_fed_against_itself():
    c = MarkovModel.random(8, 1, 10, seed=2).sample(500, 0)
    assert fed(c, c) <= 1e-6


def test_fed_mean_shift():
    delta = np.array([0.3, -1.2, 2.0])
    a = GaussianFit(np.zeros(3), np.eye(3))
    b = GaussianFit(delta, np.eye(3))
    assert frechet_distance(a, b) == pytest.approx(delta @ delta, abs=1e-8)


def test_fed_swapped_diagonals():
    a = GaussianFit(np.zeros(2), np.diag([1.0, 4.0]))
    b = GaussianFit(np.zeros(2), np.diag([4.0, 1.0]))
    # 2 * (1 + 4) - 2 * (sqrt(1 * 4) + sqrt(4 * 1))
    assert frechet_distance(a, b) == pytest.approx(2.0, abs=1e-8)


@given(st.integers(0, 1000), st.integers(0, 1000))
def test_fed_symmetric_and_non_negative(s1, s2):
    a = MarkovModel.random(6, 1, 6, seed=s1).sample(60, s1)
    b = MarkovModel.random(6, 1, 6, seed=s2).sample(60, s2 + 1)
    emb = EmbeddingModel(len(a.vocab), dim=16, seed=0)
    ab, ba = fed(a, b, emb), fed(b, a, emb)
    assert ab >= 0 and abs(ab - ba) <= 1e-8


def test_gaussian_fit_is_regularised():
    x = np.random.default_rng(0).normal(size=(5, 10))  # rank-deficient sample covariance
    fit = GaussianFit.from_samples(x, eps=1e-6)
    assert np.array_equal(fit.cov, fit.cov.T)
    assert np.linalg.eigvalsh(fit.cov).min() >= 1e-6 - 1e-12


def test_embedding_is_deterministic():
    emb1, emb2 = EmbeddingModel(20, 8, seed=4), EmbeddingModel(20, 8, seed=4)
    assert np.array_equal(emb1.embed_one((4, 5, 6)), emb2.embed_one((4, 5, 6)))
    assert np.array_equal(emb1.embed_one(()), np.zeros(8))


def test_fed_errors():
    with pytest.raises(DataError):
        fed(corpus("a"), corpus("a", "b"))

import json
import math
from pathlib import Path

import numpy as np
import pytest

from ddeval.classifier import (
    ClassifierConfig, ClassifierModel, DdReport, accuracy, balance, bce, dd_from_accuracy, encode_batch,
    estimate_dd, forward, loss_and_grads, predict_proba, train,
)
from ddeval.corpus import EOS, PAD, Corpus, DataError, Label, Vocab
from ddeval.harness import classifier_config_from_dict
from ddeval.synthetic import MarkovModel, interpolate
from ddeval.oracle import tv_exact

from gradcheck import relative_errors

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def desk_config(**overrides) -> ClassifierConfig:
    data = json.loads((CONFIGS / "lambda_ladder.json").read_text())["classifier"]
    data.update(overrides)
    return classifier_config_from_dict(data, max_len=8)


def small_config(**overrides) -> ClassifierConfig:
    base = dict(embedding_dim=8, conv_layers=((2, 8), (3, 8)), learning_rate=1e-3, batch_size=64,
                max_epochs=5, max_len=8)
    base.update(overrides)
    return ClassifierConfig(**base)


def word_corpus(words: tuple[str, ...], n: int, seed: int, vocab: Vocab, label=Label.REAL) -> Corpus:
    rng = np.random.default_rng(seed)
    seqs = [vocab.encode(rng.choice(words, size=rng.integers(1, 7))) for _ in range(n)]
    return Corpus(seqs, vocab, label)


# -- configuration -------------------------------------------------------------

def test_config_defaults():
    c = ClassifierConfig()
    assert c.conv_layers == ((2, 100), (3, 200))
    assert (c.dropout, c.learning_rate, c.batch_size, c.max_epochs) == (0.5, 1e-4, 512, 100)
    assert json.dumps(c.to_dict())


@pytest.mark.parametrize("kw", [dict(conv_layers=((0, 3),)), dict(dropout=1.0), dict(learning_rate=0.0),
                                dict(conv_layers=()), dict(batch_size=0)])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        ClassifierConfig(**kw)


# -- forward pass -------------------------------------------------------------------

def test_zero_parameters_give_one_half():
    model = ClassifierModel.init(10, small_config(), 0)
    for p in model.params.values():
        p[...] = 0.0
    batch = encode_batch([(4, 5), (), (6, 7, 8, 9)], [1, 0, 1], model)
    assert np.all(forward(model, batch) == 0.5)


def test_hand_computed_forward():
    config = ClassifierConfig(embedding_dim=1, conv_layers=((1, 1),), max_len=4)
    model = ClassifierModel.init(6, config, 0)
    emb = np.zeros((6, 1))
    emb[4], emb[5], emb[EOS], emb[PAD] = 0.5, -1.0, 0.2, 10.0  # padding must never win the max
    model.params.update({
        "embedding": emb,
        "conv0.weight": np.array([[2.0]]),
        "conv0.bias": np.array([0.1]),
        "out.weight": np.array([-1.5]),
        "out.bias": np.array([0.3]),
    })
    # conv outputs over (4, 5, EOS): 1.1, -1.9, 0.5 -> max 1.1 -> logit -1.5 * 1.1 + 0.3
    z = forward(model, encode_batch([(4, 5)], None, model))
    assert z[0] == pytest.approx(1.0 / (1.0 + math.exp(1.35)), abs=1e-15)


def test_short_sequence_uses_first_window():
    # window 3 on a one-token sequence (+EOS) still yields a feature
    config = ClassifierConfig(embedding_dim=2, conv_layers=((3, 2),), max_len=4)
    model = ClassifierModel.init(6, config, 1)
    z = forward(model, encode_batch([(4,)], None, model))
    assert np.isfinite(z).all()


def test_eval_forward_is_deterministic():
    model = ClassifierModel.init(10, small_config(dropout=0.5), 3)
    batch = encode_batch([(4, 5, 6), (7,)], None, model)
    assert np.array_equal(forward(model, batch), forward(model, batch))


def test_encode_batch_errors():
    model = ClassifierModel.init(10, small_config(max_len=3), 0)
    with pytest.raises(DataError):
        encode_batch([(4, 4, 4, 4)], None, model)
    with pytest.raises(DataError):
        encode_batch([(12,)], None, model)


# -- loss and gradients -------------------------------------------------------------

def test_loss_at_one_half_is_log_two():
    z = np.full(6, 0.5)
    assert bce(z, np.array([1, 0, 1, 1, 0, 0.0])) == pytest.approx(math.log(2), abs=1e-15)


def test_loss_clamps_extremes():
    assert bce(np.array([0.0]), np.array([1.0])) == pytest.approx(-math.log(1e-7))


def test_output_bias_gradient_closed_form():
    model = ClassifierModel.init(10, small_config(), 5)
    batch = encode_batch([(4, 5), (6,), (7, 8, 9), ()], [1, 0, 0, 1], model)
    z = forward(model, batch)
    _, grads = loss_and_grads(model, batch)
    assert grads["out.bias"][0] == pytest.approx(np.mean(z - batch.labels), abs=1e-15)
    assert set(grads) == set(model.params)
    for name, g in grads.items():
        assert g.shape == model.params[name].shape


@pytest.mark.parametrize("seed", range(20))
def test_gradients_match_finite_differences(seed):
    errors = relative_errors(seed)
    assert max(errors.values()) < 1e-4, errors


# -- evaluation -----------------------------------------------------------------------

@pytest.mark.parametrize("a,expected", [(0.596, 0.192), (0.5, 0.0), (0.721, 0.442), (0.3, 0.0), (1.0, 1.0)])
def test_dd_from_accuracy(a, expected):
    score = dd_from_accuracy(a)
    assert score.value == pytest.approx(expected, abs=1e-12)
    assert score.method == "classifier"


def test_published_pairs_agree_up_to_print_rounding():
    from test_acceptance import REAL_TABLE, SYNTHETIC_TABLE
    # a and the estimate are both printed to 3 decimals: |2a - 1 - d| <= 2 * 0.0005 + 0.0005
    pairs = [(a, d) for _, a, d in SYNTHETIC_TABLE] + [(a, d) for _, _, a, d in REAL_TABLE]
    assert len(pairs) == 30
    for a, d in pairs:
        assert abs(dd_from_accuracy(a).value - d) <= 1.5e-3 + 1e-12


def test_dd_from_accuracy_range():
    with pytest.raises(ValueError):
        dd_from_accuracy(1.2)


def test_report_identities():
    r = DdReport.from_accuracy((0.7, 0.8, 0.6), dev_accuracy=0.7, epochs_run=1, best_epoch=1,
                               sizes={"train": 1, "dev": 1, "test": 1}, seed=0, config={})
    assert r.dd_hat == 2 * r.accuracy - 1
    assert r.error == 1 - r.accuracy


def test_accuracy_is_permutation_invariant():
    vocab = Vocab(("a", "b", "c", "d"))
    model = ClassifierModel.init(len(vocab), small_config(), 2)
    real = word_corpus(("a", "b"), 200, 0, vocab).sequences
    gen = word_corpus(("c", "d"), 200, 1, vocab).sequences
    rng = np.random.default_rng(0)
    shuffled_r = [real[i] for i in rng.permutation(len(real))]
    shuffled_g = [gen[i] for i in rng.permutation(len(gen))]
    assert accuracy(model, real, gen) == accuracy(model, shuffled_r, shuffled_g)


def test_balance_downsamples_larger_side():
    vocab = Vocab(("a", "b"))
    r = word_corpus(("a",), 30, 0, vocab)
    g = word_corpus(("b",), 10, 0, vocab)
    rb, gb = balance(r, g, 0)
    assert len(rb) == len(gb) == 10 and gb is g
    assert all(s in r.sequences for s in rb.sequences)


def test_checkpoint_round_trip(tmp_path):
    model = ClassifierModel.init(9, small_config(), 4)
    model.save(tmp_path / "clf.npz")
    loaded = ClassifierModel.load(tmp_path / "clf.npz")
    assert loaded.windows == model.windows and loaded.max_len == model.max_len
    for name, p in model.params.items():
        assert np.array_equal(loaded.params[name], p)
    batch = encode_batch([(4, 5, 6)], None, model)
    assert np.array_equal(forward(loaded, batch), forward(model, batch))


# -- training -------------------------------------------------------------------------

def test_disjoint_vocabularies_separate_quickly():
    vocab = Vocab(("a", "b", "c", "d"))
    real = word_corpus(("a", "b"), 1000, 0, vocab)
    gen = word_corpus(("c", "d"), 1000, 1, vocab, Label.GENERATED)
    result = train(small_config(), real, gen, seed=0)
    assert len(result.log) <= 5
    assert max(row["dev_accuracy"] for row in result.log) > 0.99
    losses = [row["train_loss"] for row in result.log]
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_training_is_deterministic():
    vocab = Vocab(("a", "b", "c", "d"))
    real = word_corpus(("a", "b", "c"), 300, 0, vocab)
    gen = word_corpus(("b", "c", "d"), 300, 1, vocab, Label.GENERATED)
    a = train(small_config(max_epochs=3), real, gen, seed=11)
    b = train(small_config(max_epochs=3), real, gen, seed=11)
    assert a.log == b.log
    for name in a.model.params:
        assert np.array_equal(a.model.params[name], b.model.params[name])


def test_train_requires_shared_vocab():
    real = word_corpus(("a",), 10, 0, Vocab(("a",)))
    gen = word_corpus(("b",), 10, 0, Vocab(("b",)))
    with pytest.raises(DataError):
        train(small_config(), real, gen)


@pytest.mark.slow
def test_same_distribution_is_chance_level():
    m = MarkovModel.random(4, 1, 4, concentration=0.5, seed=0)
    pool = m.sample(8000, 3)
    real = pool.subset(range(4000))
    gen = pool.subset(range(4000, 8000))
    result = train(desk_config(), real, gen, seed=0)
    assert abs(result.dev_accuracy - 0.5) <= 0.03
    report = estimate_dd(real, gen, desk_config(), seed=0)
    assert report.dd_hat < 0.06


@pytest.mark.slow
def test_estimate_is_monotone_on_lambda_ladder():
    base = MarkovModel.random(4, 1, 4, concentration=0.5, seed=0)
    noise = MarkovModel.random(4, 1, 4, concentration=0.5, seed=100)
    real = base.sample(10_000, 1)
    estimates, truths = [], []
    for i, lam in enumerate([0.0, 0.3, 0.6, 0.9]):
        spec = interpolate(base, noise, lam)
        gen = spec.sample(10_000, 10 + i)
        estimates.append(estimate_dd(real, gen, desk_config(), seed=i).dd_hat)
        truths.append(tv_exact(base, spec).value)
    assert all(b > a for a, b in zip(estimates, estimates[1:])), (estimates, truths)

"""Binary CNN sequence classifier with hand-written backpropagation.

Topology (fixed after construction)::

    ids -> embedding -> [conv(window w_i, K_i kernels) -> max over time]_i
        -> concat -> dropout (train only) -> affine -> sigmoid

Each input sequence is followed by EOS and right-padded with PAD.  A conv
window starting at position ``t`` is used only if it lies inside the
sequence, except that the first window is always used so that sequences
shorter than the window still produce a feature.

The held-out accuracy ``a`` of the trained model gives the discrepancy
estimate ``max(0, 2a - 1)``.
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ddeval.corpus import DEFAULT_MAX_LEN, EOS, PAD, Corpus, SplitSpec, TokenSequence, split_corpus
from ddeval.errors import DataError, NumericError
from ddeval.oracle import DdScore

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
PROB_EPS = 1e-7


@dataclass
class ClassifierConfig:
    embedding_dim: int = 32
    conv_layers: tuple[tuple[int, int], ...] = ((2, 100), (3, 200))
    dropout: float = 0.5
    learning_rate: float = 1e-4
    batch_size: int = 512
    max_epochs: int = 100
    patience: int = 10
    min_improvement: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    init_scale: float = 0.1
    max_len: int = DEFAULT_MAX_LEN
    split: SplitSpec = field(default_factory=SplitSpec)
    dtype: str = "float64"

    def __post_init__(self):
        self.conv_layers = tuple((int(w), int(k)) for w, k in self.conv_layers)
        if not self.conv_layers:
            raise ValueError("at least one conv layer is required")
        if any(w < 1 or k < 1 for w, k in self.conv_layers):
            raise ValueError("conv windows and kernel counts must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ValueError("batch_size, max_epochs and patience must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["conv_layers"] = [list(layer) for layer in self.conv_layers]
        d["split"] = {
            "fractions": [str(f) for f in self.split.fractions],
            "ordering": self.split.ordering.value,
            "seed": self.split.seed,
        }
        return d


@dataclass
class ClassifierModel:
    vocab_size: int
    windows: tuple[int, ...]
    params: dict[str, np.ndarray]
    max_len: int = DEFAULT_MAX_LEN
    seed: int | None = None

    @classmethod
    def init(cls, vocab_size: int, config: ClassifierConfig, seed: int = 0) -> "ClassifierModel":
        rng = np.random.default_rng(seed)
        dtype = np.dtype(config.dtype)
        d, s = config.embedding_dim, config.init_scale
        params = {"embedding": rng.normal(0.0, s, (vocab_size, d))}
        for i, (w, k) in enumerate(config.conv_layers):
            params[f"conv{i}.weight"] = rng.normal(0.0, s, (w * d, k))
            params[f"conv{i}.bias"] = np.zeros(k)
        total = sum(k for _, k in config.conv_layers)
        params["out.weight"] = rng.normal(0.0, s, total)
        params["out.bias"] = np.zeros(1)
        params = {name: p.astype(dtype) for name, p in params.items()}
        windows = tuple(w for w, _ in config.conv_layers)
        return cls(vocab_size, windows, params, config.max_len, seed)

    @property
    def embedding_dim(self) -> int:
        return self.params["embedding"].shape[1]

    @property
    def input_width(self) -> int:
        return max(self.max_len + 1, max(self.windows))

    def num_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    def copy(self) -> "ClassifierModel":
        return ClassifierModel(self.vocab_size, self.windows, {k: v.copy() for k, v in self.params.items()},
                               self.max_len, self.seed)

    def save(self, path: str | Path) -> None:
        header = {
            "format": "ddeval-classifier",
            "version": CHECKPOINT_VERSION,
            "vocab_size": self.vocab_size,
            "windows": list(self.windows),
            "max_len": self.max_len,
            "seed": self.seed,
            "names": sorted(self.params),
        }
        with open(path, "wb") as fh:
            np.savez(fh, __header__=np.array(json.dumps(header, sort_keys=True)), **self.params)

    @classmethod
    def load(cls, path: str | Path) -> "ClassifierModel":
        with np.load(path, allow_pickle=False) as data:
            header = json.loads(str(data["__header__"]))
            if header.get("format") != "ddeval-classifier":
                raise DataError(f"{path}: not a classifier checkpoint")
            if header.get("version") != CHECKPOINT_VERSION:
                raise DataError(f"{path}: unsupported checkpoint version {header.get('version')}")
            params = {name: data[name].copy() for name in header["names"]}
        return cls(header["vocab_size"], tuple(header["windows"]), params, header["max_len"], header["seed"])


@dataclass
class LabeledBatch:
    ids: np.ndarray  # (B, width), PAD-padded, EOS after each sequence
    lengths: np.ndarray  # tokens + EOS
    labels: np.ndarray  # 1 = real, 0 = generated


def encode_batch(seqs: Sequence[TokenSequence], labels: Sequence[int] | np.ndarray | None,
                 model: ClassifierModel) -> LabeledBatch:
    width = model.input_width
    ids = np.full((len(seqs), width), PAD, dtype=np.int64)
    lengths = np.empty(len(seqs), dtype=np.int64)
    for row, seq in enumerate(seqs):
        n = len(seq)
        if n > model.max_len:
            raise DataError(f"sequence of length {n} exceeds max_len={model.max_len}")
        ids[row, :n] = seq
        ids[row, n] = EOS
        lengths[row] = n + 1
    if ids.size and ids.max() >= model.vocab_size:
        raise DataError("token id outside the classifier vocabulary")
    y = np.zeros(len(seqs)) if labels is None else np.asarray(labels, dtype=np.float64)
    return LabeledBatch(ids, lengths, y)


def _sigmoid(s: np.ndarray) -> np.ndarray:
    out = np.empty_like(s)
    pos = s >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-s[pos]))
    e = np.exp(s[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _windows(emb: np.ndarray, w: int) -> np.ndarray:
    """Stack ``w`` consecutive embeddings: (B, L, d) -> (B, L - w + 1, w * d)."""
    T = emb.shape[1] - w + 1
    return np.concatenate([emb[:, j : j + T, :] for j in range(w)], axis=2)


def _forward(model: ClassifierModel, batch: LabeledBatch, train: bool, rng: np.random.Generator | None,
             dropout: float):
    p = model.params
    emb = p["embedding"][batch.ids]
    pooled, cache = [], []
    for i, w in enumerate(model.windows):
        U = _windows(emb, w)
        H = U @ p[f"conv{i}.weight"] + p[f"conv{i}.bias"]
        T = H.shape[1]
        t = np.arange(T)
        valid = (t[None, :] + w <= batch.lengths[:, None]) | (t[None, :] == 0)
        H = np.where(valid[:, :, None], H, -np.inf)
        arg = H.argmax(axis=1)
        pooled.append(np.take_along_axis(H, arg[:, None, :], axis=1)[:, 0, :])
        cache.append((U, arg))
    P = np.concatenate(pooled, axis=1)
    if train and dropout > 0:
        keep = 1.0 - dropout
        mask = (rng.random(P.shape) < keep) / keep
    else:
        mask = None
    Pd = P * mask if mask is not None else P
    s = Pd @ p["out.weight"] + p["out.bias"][0]
    return _sigmoid(s), (emb, cache, Pd, mask)


def forward(model: ClassifierModel, batch: LabeledBatch, train: bool = False,
            rng: np.random.Generator | None = None, dropout: float = 0.0) -> np.ndarray:
    """Probability of the *real* class for every row of ``batch``."""
    return _forward(model, batch, train, rng, dropout)[0]


def bce(z: np.ndarray, y: np.ndarray) -> float:
    """Binary cross-entropy with ``z`` clamped to ``[1e-7, 1 - 1e-7]`` before the log."""
    zc = np.clip(z, PROB_EPS, 1.0 - PROB_EPS)
    return float(-np.mean(y * np.log(zc) + (1.0 - y) * np.log(1.0 - zc)))


def loss_and_grads(model: ClassifierModel, batch: LabeledBatch, train: bool = False,
                   rng: np.random.Generator | None = None, dropout: float = 0.0
                   ) -> tuple[float, dict[str, np.ndarray]]:
    """Mean BCE and its exact gradient w.r.t. every parameter.

    The gradient is that of the unclamped loss; the two differ only where
    the clamp is active.
    """
    p = model.params
    z, (emb, cache, Pd, mask) = _forward(model, batch, train, rng, dropout)
    y = batch.labels
    B = len(y)
    loss = bce(z, y)
    ds = (z - y) / B
    grads = {"out.weight": Pd.T @ ds, "out.bias": np.array([ds.sum()])}
    dP = ds[:, None] * p["out.weight"][None, :]
    if mask is not None:
        dP = dP * mask
    d = model.embedding_dim
    demb = np.zeros_like(emb)
    offset = 0
    for i, w in enumerate(model.windows):
        U, arg = cache[i]
        W = p[f"conv{i}.weight"]
        K = W.shape[1]
        dm = dP[:, offset : offset + K]
        offset += K
        T = U.shape[1]
        G = np.zeros((B, T, K), dtype=dm.dtype)
        np.put_along_axis(G, arg[:, None, :], dm[:, None, :], axis=1)
        grads[f"conv{i}.weight"] = U.reshape(B * T, -1).T @ G.reshape(B * T, K)
        grads[f"conv{i}.bias"] = dm.sum(axis=0)
        dU = G @ W.T
        for j in range(w):
            demb[:, j : j + T, :] += dU[:, :, j * d : (j + 1) * d]
    dE = np.zeros_like(p["embedding"])
    np.add.at(dE, batch.ids.ravel(), demb.reshape(-1, d))
    grads["embedding"] = dE
    return loss, grads


class Adam:
    def __init__(self, params: dict[str, np.ndarray], lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for k, g in grads.items():
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            params[k] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def predict_proba(model: ClassifierModel, seqs: Sequence[TokenSequence], batch_size: int = 2048) -> np.ndarray:
    out = [forward(model, encode_batch(seqs[i : i + batch_size], None, model))
           for i in range(0, len(seqs), batch_size)]
    return np.concatenate(out) if out else np.zeros(0)


def accuracy(model: ClassifierModel, real: Sequence[TokenSequence], generated: Sequence[TokenSequence]
             ) -> tuple[float, float, float]:
    """(overall, real-class, generated-class) accuracy; ``z == 0.5`` counts as real."""
    hit_r = predict_proba(model, real) >= 0.5
    hit_g = predict_proba(model, generated) < 0.5
    total = (hit_r.sum() + hit_g.sum()) / (len(hit_r) + len(hit_g))
    return float(total), float(hit_r.mean()), float(hit_g.mean())


def dd_from_accuracy(a: float) -> DdScore:
    """``max(0, 2a - 1)`` as a classifier-estimated discrepancy."""
    if not 0.0 <= a <= 1.0:
        raise ValueError("accuracy must lie in [0, 1]")
    return DdScore(max(0.0, 2.0 * a - 1.0), "classifier", provenance={"accuracy": a})


def balance(real: Corpus, generated: Corpus, seed: int) -> tuple[Corpus, Corpus]:
    """Downsample the larger corpus (order preserved) to the size of the smaller."""
    n = min(len(real), len(generated))
    if n == 0:
        raise DataError("cannot train on an empty corpus")
    rng = np.random.default_rng(seed)

    def cut(c: Corpus) -> Corpus:
        if len(c) == n:
            return c
        return c.subset(np.sort(rng.choice(len(c), n, replace=False)))

    return cut(real), cut(generated)


@dataclass
class TrainingResult:
    model: ClassifierModel
    log: list[dict]
    best_epoch: int
    dev_accuracy: float
    splits: dict[str, tuple[Corpus, Corpus]]


def train(config: ClassifierConfig, real: Corpus, generated: Corpus, seed: int = 0) -> TrainingResult:
    """Train real-vs-generated and keep the checkpoint with the best dev accuracy."""
    if real.vocab != generated.vocab:
        raise DataError("real and generated corpora must share one vocabulary")
    init_seed, balance_seed, shuffle_seed, dropout_seed = np.random.SeedSequence(seed).generate_state(4)
    real, generated = balance(real, generated, int(balance_seed))
    r_train, r_dev, r_test = split_corpus(real, config.split)
    g_train, g_dev, g_test = split_corpus(generated, config.split)

    model = ClassifierModel.init(len(real.vocab), config, int(init_seed))
    seqs = r_train.sequences + g_train.sequences
    labels = np.concatenate([np.ones(len(r_train)), np.zeros(len(g_train))])
    train_batch = encode_batch(seqs, labels, model)

    opt = Adam(model.params, config.learning_rate, config.adam_beta1, config.adam_beta2, config.adam_eps)
    shuffle_rng = np.random.default_rng(int(shuffle_seed))
    dropout_rng = np.random.default_rng(int(dropout_seed))
    best, best_acc, best_epoch, reference_acc, stale = model.copy(), -1.0, 0, -1.0, 0
    history = []
    n = len(labels)
    for epoch in range(1, config.max_epochs + 1):
        t0 = time.perf_counter()
        order = shuffle_rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            batch = LabeledBatch(train_batch.ids[idx], train_batch.lengths[idx], labels[idx])
            loss, grads = loss_and_grads(model, batch, True, dropout_rng, config.dropout)
            if not math.isfinite(loss):
                raise NumericError(f"non-finite training loss at epoch {epoch}")
            opt.step(model.params, grads)
            total += loss * len(idx)
        dev_acc = accuracy(model, r_dev.sequences, g_dev.sequences)[0]
        history.append({"epoch": epoch, "train_loss": total / n, "dev_accuracy": dev_acc})
        log.debug("epoch %d loss %.4f dev %.4f (%.1fs)", epoch, total / n, dev_acc, time.perf_counter() - t0)
        if dev_acc > best_acc:
            best, best_acc, best_epoch = model.copy(), dev_acc, epoch
        if dev_acc > reference_acc + config.min_improvement:
            reference_acc, stale = dev_acc, 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    splits = {"train": (r_train, g_train), "dev": (r_dev, g_dev), "test": (r_test, g_test)}
    return TrainingResult(best, history, best_epoch, best_acc, splits)


@dataclass
class DdReport:
    accuracy: float
    error: float
    dd_hat: float
    real_accuracy: float
    generated_accuracy: float
    dev_accuracy: float
    epochs_run: int
    best_epoch: int
    sizes: dict[str, int]
    seed: int
    config: dict
    log: list[dict] = field(default_factory=list)

    @classmethod
    def from_accuracy(cls, acc: tuple[float, float, float], **kw) -> "DdReport":
        a = acc[0]
        return cls(a, 1.0 - a, dd_from_accuracy(a).value, acc[1], acc[2], **kw)

    def score(self) -> DdScore:
        return DdScore(self.dd_hat, "classifier", n=2 * self.sizes["test"],
                       provenance={"accuracy": self.accuracy, "seed": self.seed})

    def to_dict(self) -> dict:
        return asdict(self)


def estimate_dd(real: Corpus, generated: Corpus, config: ClassifierConfig | None = None, seed: int = 0
                ) -> DdReport:
    """Train on (real, generated) and report the test-set discrepancy estimate."""
    config = config or ClassifierConfig()
    result = train(config, real, generated, seed)
    r_test, g_test = result.splits["test"]
    acc = accuracy(result.model, r_test.sequences, g_test.sequences)
    sizes = {name: len(pair[0]) for name, pair in result.splits.items()}
    return DdReport.from_accuracy(
        acc,
        dev_accuracy=result.dev_accuracy,
        epochs_run=len(result.log),
        best_epoch=result.best_epoch,
        sizes=sizes,
        seed=seed,
        config=config.to_dict(),
        log=result.log,
    )

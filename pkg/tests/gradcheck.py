"""Central finite differences against the hand-derived classifier gradients."""

import numpy as np

from ddeval.classifier import ClassifierConfig, ClassifierModel, encode_batch, loss_and_grads

STEP = 1e-4


def tiny_problem(seed: int):
    rng = np.random.default_rng(seed)
    windows = rng.choice([1, 2, 3, 4], size=int(rng.integers(1, 4)), replace=False)
    config = ClassifierConfig(
        embedding_dim=int(rng.integers(2, 5)),
        conv_layers=tuple((int(w), int(rng.integers(1, 4))) for w in windows),
        max_len=5,
        init_scale=0.5,
    )
    vocab_size = 8
    model = ClassifierModel.init(vocab_size, config, seed)
    for name in model.params:
        if name.endswith("bias"):
            model.params[name] = rng.normal(0.0, 0.3, model.params[name].shape)
    B = int(rng.integers(3, 8))
    seqs = [tuple(int(t) for t in rng.integers(4, vocab_size, size=rng.integers(0, 6))) for _ in range(B)]
    labels = rng.integers(0, 2, size=B)
    dropout = 0.3 if seed % 2 else 0.0
    return model, encode_batch(seqs, labels, model), dropout


def relative_errors(seed: int) -> dict[str, float]:
    """Per-group ``|analytic - numeric| / max(|analytic|, |numeric|)`` (Frobenius norms)."""
    model, batch, dropout = tiny_problem(seed)

    def loss_at() -> float:
        # a fresh generator per call reproduces the same dropout mask
        return loss_and_grads(model, batch, dropout > 0, np.random.default_rng(seed), dropout)[0]

    _, analytic = loss_and_grads(model, batch, dropout > 0, np.random.default_rng(seed), dropout)
    errors = {}
    for name, param in model.params.items():
        numeric = np.zeros_like(param)
        for idx in np.ndindex(param.shape):
            saved = param[idx]
            param[idx] = saved + STEP
            up = loss_at()
            param[idx] = saved - STEP
            down = loss_at()
            param[idx] = saved
            numeric[idx] = (up - down) / (2 * STEP)
        scale = max(np.linalg.norm(analytic[name]), np.linalg.norm(numeric))
        errors[name] = 0.0 if scale < 1e-12 else float(np.linalg.norm(analytic[name] - numeric) / scale)
    return errors

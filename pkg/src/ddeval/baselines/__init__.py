from ddeval.baselines.bleu import bleu, self_bleu, sentence_bleu
from ddeval.baselines.fed import EmbeddingModel, GaussianFit, fed, frechet_distance
from ddeval.baselines.kneser_ney import (
    KneserNeyLM,
    NgramTable,
    build_ngram_table,
    kn_score,
    lm_score,
    reverse_lm_score,
)

__all__ = [
    "bleu",
    "self_bleu",
    "sentence_bleu",
    "EmbeddingModel",
    "GaussianFit",
    "fed",
    "frechet_distance",
    "KneserNeyLM",
    "NgramTable",
    "build_ngram_table",
    "kn_score",
    "lm_score",
    "reverse_lm_score",
]

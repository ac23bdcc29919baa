"""Distributional discrepancy (total variation) between text distributions.

Estimated with a real-vs-generated CNN classifier as ``2 * accuracy - 1`` and
checked against exact Markov-chain oracles; BLEU/self-BLEU, Kneser-Ney LM
scores and Frechet embedding distance are provided as baselines.
"""

__version__ = "0.1.0"

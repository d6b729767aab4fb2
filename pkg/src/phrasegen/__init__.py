"""Carrier-phrase generation toolkit.

Trains seq2seq/VAE/CVAE generators over delexicalized carrier phrases,
scores the generated sets with an accuracy/diversity/novelty metric
ensemble, and measures downstream usefulness on an intent-classification
task.
"""

__version__ = "0.1.0"

"""Embedding-size search for tabular deep recommenders.

Train a width-adaptive supernet once, search per-field embedding sizes with a
policy network, then retrain the chosen architecture from scratch.
"""

__version__ = "0.1.0"

"""Iterative pool-based active learning on imbalanced datasets."""

__version__ = "0.1.0"

"""Rebalanced normalized-MSE losses for zero-shot semantic-embedding regression."""

__version__ = "0.1.0"

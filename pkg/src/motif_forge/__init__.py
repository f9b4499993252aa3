"""Frequent motif mining with order-embedding graph neural networks."""

__version__ = "0.1.0"

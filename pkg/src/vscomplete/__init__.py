"""Retrieval-grounded value-set completion: corpus tools, pooling, an MLP pair classifier, and a recovery simulator."""

__version__ = "0.1.0"

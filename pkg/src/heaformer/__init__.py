"""Transformer and classical regressors for high-entropy alloy property prediction."""

__version__ = "0.1.0"

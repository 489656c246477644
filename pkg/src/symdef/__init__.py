"""Symbolic hyperparameter defaults learned by genetic programming on surrogates."""

__version__ = "0.1.0"

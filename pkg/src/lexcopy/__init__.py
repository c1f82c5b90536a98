"""Lexically constrained translation: copy-aware transformer, homograph filter, evaluation."""

__version__ = "0.1.0"

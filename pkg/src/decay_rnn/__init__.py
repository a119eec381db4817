"""Decay RNN laboratory: cells, syntax corpora, training and evaluation."""

__version__ = "0.1.0"

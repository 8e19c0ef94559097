"""Retrieval-augmented self-supervised lake forecasting in numpy."""

__version__ = "0.1.0"

"""Benchmarking random-utility and machine-learning choice models on data with known ground truth."""

__version__ = "0.1.0"

"""Interpolation consistency training for semi-supervised classification."""

__version__ = "0.1.0"

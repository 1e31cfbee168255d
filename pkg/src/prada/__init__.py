"""Prediction-based adaptive modulation and coding over FSMC channels."""

__version__ = "0.1.0"

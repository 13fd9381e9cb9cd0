"""Hyperbolic symbols with double characteristics: classification and checks."""

__version__ = "0.1.0"

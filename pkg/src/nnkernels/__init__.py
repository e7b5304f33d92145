"""Empirical NTK and conjugate-kernel surrogates for small fully-connected networks."""

__version__ = "0.1.0"

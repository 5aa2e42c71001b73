"""GFZIP: Bayesian factor zero-inflated Poisson model for grouped counts."""

__version__ = "0.1.0"

"""Bayesian neural networks whose layer widths and depth are learned by variational inference."""

__version__ = "0.1.0"

"""Bayesian overlapping stochastic block model."""

__version__ = "0.1.0"

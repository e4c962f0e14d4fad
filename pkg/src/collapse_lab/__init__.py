"""Numerics for stochastic state-reduction dynamics."""

__version__ = "0.1.0"

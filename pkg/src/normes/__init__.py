"""Normalized Markov chains of evolution strategies on scaling-invariant functions."""

__version__ = "0.1.0"

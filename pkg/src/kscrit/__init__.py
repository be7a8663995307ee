"""Numerics for the critical-mass dichotomy of a radial chemotaxis model."""

__version__ = "0.1.0"

"""Multiphoton spatial correlations of entangled image pairs."""

__version__ = "0.1.0"

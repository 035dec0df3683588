"""Numerical laboratory for the spectral shift function of crossed-field Schroedinger operators."""

__version__ = "0.1.0"

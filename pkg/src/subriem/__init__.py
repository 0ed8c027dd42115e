"""Numerical laboratory for sub-Riemannian measures and functional inequalities."""

__version__ = "0.1.0"

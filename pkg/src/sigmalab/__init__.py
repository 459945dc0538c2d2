"""Numerical toolkit for degenerate k-Hessian and Christoffel-Minkowski type equations."""

__version__ = "0.1.0"

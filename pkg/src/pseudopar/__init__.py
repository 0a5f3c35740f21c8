"""Finite-element solvers for pseudo-parabolic conduction problems with thin and thick interfaces."""

__version__ = "0.1.0"

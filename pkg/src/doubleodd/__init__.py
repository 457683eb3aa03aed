"""Numerical laboratory for double-odd 2D Euler flows with a hyperbolic stagnation point."""

__version__ = "0.1.0"

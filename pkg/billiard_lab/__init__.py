"""Desk-scale laboratory for hyperbolic billiards outside convex obstacles."""

__version__ = "0.3.0"

"""Numerical verification suite for nearly Kahler six-manifold geometry."""

__version__ = "0.1.0"

"""Numerical laboratory for boundary layers in periodic homogenization."""

__version__ = "0.1.0"

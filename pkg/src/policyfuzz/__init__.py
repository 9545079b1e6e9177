"""Fuzz testing for sequential decision policies."""

__version__ = "0.1.0"

"""Learned low-dimensional state representations for 2D navigation agents."""

__version__ = "0.1.0"

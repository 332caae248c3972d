"""Fusing mobile and fixed PM2.5 monitoring into high-resolution pollution maps."""

__version__ = "0.1.0"

"""Penultimate-layer feature export for image folders."""

__version__ = "0.1.0"

"""Adaptive minimum-dispersion search-based motion planning."""

__version__ = "0.1.0"

"""Spectral shift functions for Schrodinger operators with compactly supported potentials."""

__version__ = "0.1.0"

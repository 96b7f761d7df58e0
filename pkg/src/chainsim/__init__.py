"""Qubit transfer through disordered spin chains and multi-rail error correction."""

__version__ = "0.1.0"

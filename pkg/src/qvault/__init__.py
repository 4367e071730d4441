"""Quantum-vault digital currency simulator."""

__version__ = "0.1.0"

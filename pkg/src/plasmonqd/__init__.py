"""Entanglement of quantum dots coupled to a dissipative plasmon."""

__version__ = "0.1.0"

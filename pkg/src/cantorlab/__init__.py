"""Cantor-set counterexamples for variational energies with non-standard growth."""

__version__ = "0.1.0"

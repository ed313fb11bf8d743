"""Fairness-aware graph condensation."""

__version__ = "0.1.0"

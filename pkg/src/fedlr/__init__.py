"""Federated recommendation with low-rank communication-efficient updates."""

__version__ = "0.1.0"

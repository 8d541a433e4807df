"""Closed-loop artificial pancreas simulation with context-aware safety monitoring."""

__version__ = "0.1.0"

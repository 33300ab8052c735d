"""Simulated error mitigation for small trapped-ion style gate sets."""

__version__ = "0.1.0"

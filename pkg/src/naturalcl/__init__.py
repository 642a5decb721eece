"""Continual learning under power-law and exponential rehearsal environments."""

__version__ = "0.1.0"

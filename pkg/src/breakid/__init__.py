"""Synthesis and data-driven rediscovery of 2D breakage population balances."""
__version__ = "0.1.0"

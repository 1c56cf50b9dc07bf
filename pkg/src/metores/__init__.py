"""Metonymy resolution with target word masking."""

__version__ = "0.1.0"

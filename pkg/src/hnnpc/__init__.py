"""Hemisphere neural networks: interpretable latent components of a forecast."""

__version__ = "0.1.0"

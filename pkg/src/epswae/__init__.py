"""Encoded-prior sliced Wasserstein autoencoder at desk scale."""

__version__ = "1.0.0"

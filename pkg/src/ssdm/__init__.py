"""Diffusion generative models on the manifold of pure quantum states."""

__version__ = "0.1.0"

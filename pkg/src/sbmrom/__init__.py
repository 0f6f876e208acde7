"""Shifted-boundary POD-Galerkin reduced order modelling for steady channel flow."""
__version__ = "0.1.0"

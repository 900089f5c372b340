"""Nonlinear sheaf diffusion on graphs: operators, models, and experiments."""

__version__ = "0.1.0"

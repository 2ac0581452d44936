"""Exact computation and Monte Carlo toolkit for the free boundary dimer model."""

__version__ = "0.1.0"

"""Stabilizing predictive control for mixed logical dynamical systems."""

__version__ = "0.1.0"

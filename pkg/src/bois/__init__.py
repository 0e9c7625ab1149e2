"""Bayesian optimisation with information sharing for families of VQE problems."""

__version__ = "0.1.0"

"""Robust and differentially private Bayesian estimation at desk scale."""

from .kernels import BACKEND

__all__ = ["BACKEND"]
__version__ = "0.1.0"

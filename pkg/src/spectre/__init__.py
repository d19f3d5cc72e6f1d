"""Tensor-regularized iterative reconstruction for multi-energy CT."""

__version__ = "0.1.0"

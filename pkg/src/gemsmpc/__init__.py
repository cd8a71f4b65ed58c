"""Generative-model-based stochastic MPC for a surrogate HCCI engine."""

__version__ = "0.1.0"

"""Federated distributional RL with a risk-aware distributional trust region."""

__version__ = "0.1.0"

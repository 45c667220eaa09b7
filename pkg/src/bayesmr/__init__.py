"""Bayesian Mendelian randomization with causal-direction model averaging."""

__version__ = "0.1.0"

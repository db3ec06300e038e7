"""Bayesian neural Hawkes processes with Monte-Carlo dropout uncertainty."""

__version__ = "0.1.0"
CHECKPOINT_FORMAT_VERSION = 1

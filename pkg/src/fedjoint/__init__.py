"""Federated joint modelling of degradation signals and failure times."""

__version__ = "0.1.0"

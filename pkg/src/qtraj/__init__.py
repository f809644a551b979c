"""Discrete-time quantum stochastic processes with interventions."""

__version__ = "0.1.0"

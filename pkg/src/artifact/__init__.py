"""Forecasting tipping points in non-stationary dynamical systems with reservoir computers."""

__version__ = "0.1.0"

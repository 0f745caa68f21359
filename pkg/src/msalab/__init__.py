"""Desk-scale numerical laboratory for localization of Poisson Hamiltonians."""

__version__ = "0.1.0"

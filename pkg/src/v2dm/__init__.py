"""Variational 2DM optimization under N-representability conditions."""
__version__ = "0.1.0"

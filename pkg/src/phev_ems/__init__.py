"""Plug-in hybrid energy management: two-phase ADMM with DP and CDCS baselines."""

__version__ = "0.1.0"

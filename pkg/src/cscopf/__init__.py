"""Convexified small-signal-stability-constrained optimal power flow."""

__version__ = "0.1.0"

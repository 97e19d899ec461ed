"""Predictive closed-loop slice provisioning over emulated O-RAN interfaces."""

__version__ = "0.1.0"

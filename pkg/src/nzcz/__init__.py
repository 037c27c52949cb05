"""Pulse-level simulation of Net-Zero flux-pulse CZ gates between two transmons."""

__version__ = "0.1.0"

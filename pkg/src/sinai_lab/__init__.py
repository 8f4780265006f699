"""Simulation and verification toolkit for Sinai's walk in random environment."""

__version__ = "0.1.0"

"""Geometry-guided synthesis of vehicles in uncommon states."""

__version__ = "0.1.0"

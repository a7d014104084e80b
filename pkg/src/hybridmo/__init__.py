"""Hybrid evolutionary and Adam training of a population of models along a two-objective trade-off."""

__version__ = "0.1.0"

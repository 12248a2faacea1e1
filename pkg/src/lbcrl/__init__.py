"""Exploration and planning in linear Bellman complete MDPs with deterministic transitions."""

__version__ = "0.1.0"

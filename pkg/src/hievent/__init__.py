"""Hierarchical semi-supervised event sequence modeling."""

__version__ = "0.1.0"

"""Disentangled common/private representation learning on multiplex graphs."""

__version__ = "0.1.0"

"""Damage & repair self-supervised feature learning in plain numpy."""

__version__ = "0.1.0"

"""Prey-predator dynamics with additional food, group defence and predator interference."""

__version__ = "0.1.0"

"""Potential-destination discovery for low-predictability travelers with a
trip knowledge graph embedding."""

__version__ = "0.1.0"

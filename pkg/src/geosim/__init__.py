"""Discrete-event simulator for a two-layer (national / global) immunization blockchain."""

__version__ = "0.1.0"

"""Fermionic mean-field and semiclassical limits on periodic grids."""

__version__ = "0.1.0"

"""Transition densities, optimal bounds and controls for reflecting diffusions on [0, inf)."""

__version__ = "0.1.0"

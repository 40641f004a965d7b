"""Spectral toolkit for norm inflation of the forced 2D Navier-Stokes equations."""

__version__ = "0.1.0"

"""Numerical laboratory for the lattice parabolic Anderson model."""

__version__ = "0.1.0"

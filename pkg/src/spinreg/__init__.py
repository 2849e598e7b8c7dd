"""Simulation toolkit for a two-nuclear-spin register read out through an electron spin."""

__version__ = "0.1.0"

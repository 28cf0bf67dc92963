"""Numerical toolkit for the thin-film micromagnetics boundary-vortex regime."""
__version__ = "0.1.0"

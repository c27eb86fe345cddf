"""Numerical laboratory for the thin obstacle (Signorini) problem and its
almost minimizers: solvers, monotonicity functionals, blowups and free
boundary classification on half-domain Cartesian grids."""

__version__ = "0.1.0"

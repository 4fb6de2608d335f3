"""Numerical laboratory for degenerate elliptic regularity under Dini-type degeneracy laws."""

__version__ = "0.1.0"

"""Solver and verifier toolkit for matrix-valued linear-quadratic
mean-field-type games with regime switching and jumps."""

__version__ = "0.1.0"

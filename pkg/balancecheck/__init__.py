"""Numerical checks of total-variation and L1-stability estimates for scalar balance laws."""

__version__ = "0.1.0"

"""Toolkit for jump SDEs with non-globally-Lipschitz coefficients."""

__version__ = "0.1.0"

"""Numerical laboratory for high-contrast periodic composites in finite elasticity."""

__version__ = "0.1.0"

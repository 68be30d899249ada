"""Null-geodesic lengths and boundary rigidity of static Lorentzian metrics."""

__version__ = "0.1.0"

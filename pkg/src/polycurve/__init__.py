"""Polyharmonic curves on spheres and space forms."""
from polycurve import ambient, families, geometry, residuals, variational

__all__ = ["ambient", "geometry", "residuals", "families", "variational"]
__version__ = "0.1.0"

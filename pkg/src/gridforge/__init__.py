"""Harmonize raw power-system source tables into validated Tabular Data Packages."""

from gridforge.markers import MarkerFlag

__version__ = "0.1.0"
__all__ = ["MarkerFlag", "__version__"]

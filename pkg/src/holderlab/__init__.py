"""Numerical laboratory for p-Poisson problems with Morrey-type measure data."""

from .errors import LabError

__version__ = "0.1.0"

__all__ = ["LabError", "__version__"]

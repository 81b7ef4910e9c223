"""High-order spectral-element potential-flow solver for hydrodynamic coefficients."""

__version__ = "0.1.0"

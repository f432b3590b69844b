"""Spectral and maximal-function checks for elliptic systems near a conical boundary point.

Submodules are imported on demand so that the CLI can cap the BLAS thread
pool before numpy loads.
"""
__version__ = "0.1.0"

__all__ = ["sphere_spectra", "pencil", "green_model", "dirichlet_harness", "cli", "errors"]

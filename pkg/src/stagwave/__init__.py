"""Staggered-grid SBP solver for the 2-D acoustic wave equation on
curvilinear grids, with energy diagnostics and eigenvalue-based stability
analysis."""

__version__ = "0.1.0"

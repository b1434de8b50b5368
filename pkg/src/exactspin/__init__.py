"""Exact sampling of lattice spin models.

Monotone single-site dynamics with digit matching, coupling from the
past, and space-time coarse-graining diagnostics for the square well
model and the XY model in its coordinate representation.
"""

__version__ = "0.1.0"

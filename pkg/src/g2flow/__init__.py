"""Numerical toolkit for closed G2-structures on the flat 7-torus: exact
pointwise exterior algebra, discrete differential geometry on periodic
grids, Laplacian-flow time integration, and verification of the curvature
and torsion identities that govern the flow."""

__version__ = "0.1.0"

from .errors import (ConfigError, DegreeError, G2FlowError,
                     NonPositiveShiftedScalar, NotPositive, PositivityLost,
                     SnapshotError, Stalled)

__all__ = [
    "ConfigError", "DegreeError", "G2FlowError", "NonPositiveShiftedScalar",
    "NotPositive", "PositivityLost", "SnapshotError", "Stalled",
    "__version__",
]

"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: data problems exit 2, numeric
failures exit 3.
"""


class OdgenError(Exception):
    """Base class for all package errors."""


class DataFormatError(OdgenError):
    """Malformed or inconsistent input files / city components."""


class DegenerateNetworkError(OdgenError):
    """OD network with no usable flow mass (all zero, or an absorbing node)."""


class AbsorbingNodeError(DegenerateNetworkError):
    """A region with zero out-flow was asked to emit a transition."""


class NumericError(OdgenError):
    """Numerical failure (overflow, divergence) signalling bad parameters."""


class GravityOverflowError(NumericError):
    """Gravity decoder produced non-finite flows."""


class TrainingDivergedError(NumericError):
    """Adversarial training produced a non-finite loss."""

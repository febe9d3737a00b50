"""Semantic exception hierarchy.

Every error raised by this package derives from :class:`LipctxError`, so
callers (and the CLI) can distinguish library failures from programming
errors. Domain violations are fail-closed by design: a Lipschitz
certificate is conditional on domain membership, so evaluating a layer
outside its declared domain raises instead of silently extrapolating.
"""
from __future__ import annotations


class LipctxError(Exception):
    """Base class for all package errors."""


class DimensionMismatchError(LipctxError):
    """Operands have incompatible dimensions."""


class InvalidMeasureError(LipctxError):
    """Point/weight data cannot form a valid empirical measure."""


class DomainViolationError(LipctxError):
    """A query or atom lies outside a layer's declared domain.

    ``stage`` is the block index at which the violation occurred, or
    ``None`` for standalone layer evaluation.
    """

    def __init__(self, message: str, stage: int | None = None):
        super().__init__(message)
        self.stage = stage


class CapExceededError(LipctxError):
    """Problem size exceeds a configured solver cap."""


class NotClampedError(LipctxError):
    """A certification routine was handed an unclamped model."""


class BoundaryProximityError(LipctxError):
    """Finite-difference probe point too close to the domain boundary."""


class SeparationError(LipctxError):
    """Two-point separator precondition violated or rescale degenerate."""


class IncompatibleTargetsError(LipctxError):
    """Interpolation targets violate the two-sided Lipschitz compatibility."""

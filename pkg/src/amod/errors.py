"""Exception types shared across the package."""


class AmodError(Exception):
    """Base class for all package-specific errors."""


class InvalidSpec(AmodError):
    """A domain object violates its invariants (maps to CLI exit code 2)."""


class NumericalFailure(AmodError):
    """The QP solver did not reach the required accuracy (CLI exit code 3)."""

    def __init__(self, message, status=None, residuals=None):
        super().__init__(message)
        self.status = status
        self.residuals = residuals


class NonNormalizedDensity(InvalidSpec):
    """Tabulated price density does not integrate to one."""


class DegenerateDistribution(AmodError):
    """Operation undefined for a zero-width price support."""


class BatteryTooSmall(AmodError):
    """Rebalancing needs at least 3 battery units (2 are burned in transit)."""


class ConstraintViolation(AmodError):
    """Input parameter falls outside the validity interval of a formula."""


class NegativePriceSupport(AmodError):
    """Requested price spread would push the support below zero."""


class StrandedVehicle(AmodError):
    """Internal invariant breach: a vehicle hit an empty battery with no charge option."""


class MalformedCsv(AmodError):
    """CSV file is empty or missing required columns."""

"""Exception hierarchy shared by all modules.

Every error derives from ``BoundsError``. Validation problems also derive
from ``ValueError`` so callers can treat them as ordinary bad input; the CLI
maps ``ValidationError`` to exit code 2 and ``InsufficientDataError`` to 3.
"""


class BoundsError(Exception):
    """Base class for library errors."""


class ValidationError(BoundsError, ValueError):
    """Input violates a documented precondition."""


class DomainError(ValidationError):
    """Argument outside the mathematical domain of an operation."""


class DegenerateGapError(ValidationError):
    """A gap or region of zero length where positive length is required."""


class SizeError(ValidationError):
    """Problem too large for an exact small-instance solver."""


class StructureError(ValidationError):
    """Interval family does not satisfy the pi-system condition."""


class ConsistencyError(ValidationError):
    """Observed conditionals that should agree do not."""


class GapViolationError(ValidationError):
    """Propensity levels cannot be separated at the requested gap."""


class MissingDataError(ValidationError):
    """A required measure, moment or column is absent."""


class InsufficientDataError(BoundsError):
    """Too few observations to fit a required nuisance."""


class InfeasibleError(BoundsError):
    """Linear program has no feasible point (misspecified sieve)."""

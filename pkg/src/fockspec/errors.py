"""Exception taxonomy.

Three coarse families matter for the command-line tool's exit codes:
configuration problems (exit 2), numeric-domain violations (exit 3) and
broken structural invariants (exit 4).
"""


class FockspecError(Exception):
    """Base class for all package errors."""


class ConfigError(FockspecError):
    """Malformed or inconsistent run configuration."""


class InvalidArgumentError(FockspecError, ValueError):
    """An argument violates a documented precondition."""


class UnsupportedModeError(InvalidArgumentError):
    """Operation not defined for this grid mode."""


class ResourceLimitError(FockspecError):
    """A dense object would exceed the configured size cap."""


class NumericDomainError(FockspecError):
    """Evaluation requested outside the numerically valid domain."""


class SingularNodeError(NumericDomainError):
    """A quadrature node coincides with a singularity of the integrand."""


class SpectralBandError(NumericDomainError):
    """Spectral parameter lies strictly inside the fiber band."""


class InconsistentThresholdError(NumericDomainError):
    """A denominator crossed zero although z was claimed below the band."""


class DecouplingViolatedError(NumericDomainError):
    """Cross coupling term does not vanish; the two determinant factors do
    not decouple on this grid."""


class SquareRootDomainError(NumericDomainError):
    """sign(Delta) * Delta was non-positive where a square root is needed."""


class ForbiddenRegionError(NumericDomainError):
    """z lies in (or too close to) the essential spectrum."""


class DegenerateMinimumError(NumericDomainError):
    """Fitted Hessian at the two-particle dispersion minimum is not
    positive definite."""


class NotAnEigenvalueError(NumericDomainError):
    """Claimed root fails the rank test of the reduced 2x2 system."""


class InvariantViolationError(FockspecError):
    """A structural guarantee (interval count, symmetry, ...) failed."""

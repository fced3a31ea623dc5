"""Exception hierarchy shared across the package.

``NumericalError`` subclasses indicate a failure of the numerics (singular
systems, degenerate estimates, non-convergence); everything else is an input
or usage error.  The CLI maps the former to exit code 2 and the latter to 1.
"""


class CtrecError(Exception):
    """Base class for every error raised by this package."""


class NumericalError(CtrecError):
    """Numerical failure: singular system, degenerate estimate, divergence."""


# --- structure construction ---------------------------------------------

class EmptyHierarchy(CtrecError):
    """Aggregation matrix has no upper or no bottom series."""


class ZeroRow(CtrecError):
    """An upper series aggregates nothing (all-zero aggregation row)."""


class NonDivisor(CtrecError):
    """A temporal aggregation order does not divide the top order."""


class DimensionOverflow(CtrecError):
    """Problem size exceeds the configured cap for the requested path."""


class ShapeMismatch(CtrecError):
    """Operands have incompatible shapes."""


# --- covariance estimation ----------------------------------------------

class InsufficientResiduals(CtrecError):
    """Too few residual periods for the requested estimator."""


class DegenerateVariance(NumericalError):
    """A variance estimate is zero; the covariance would not be positive
    definite.  Use a diagonal jitter to regularise deliberately."""


class SingularCovariance(NumericalError):
    """Sample covariance is rank deficient beyond tolerance."""


# --- reconciliation -------------------------------------------------------

class SingularSystem(NumericalError):
    """The constrained least-squares system could not be factorised."""


class CoherenceViolation(NumericalError):
    """A reconciled output failed the post-hoc coherence check."""


class NotConverged(NumericalError):
    """Iterative reconciliation hit the iteration cap.

    Carries the last iterate (``forecasts``) and the ``trace`` so callers can
    inspect partial results.
    """

    def __init__(self, message, forecasts=None, trace=None):
        super().__init__(message)
        self.forecasts = forecasts
        self.trace = trace


# --- evaluation -----------------------------------------------------------

class ZeroMeanActuals(CtrecError):
    """nRMSE is undefined when the actuals average to zero."""


class ZeroReference(CtrecError):
    """Forecast skill is undefined for a zero reference nRMSE."""


class DegenerateTable(CtrecError):
    """Rank table too small (or too large) for the multiple-comparison test."""


# --- experiment harness and file ingestion --------------------------------

class InsufficientHistory(CtrecError):
    """Not enough observations before the forecast origin."""


class BadPartition(CtrecError):
    """Zone sizes do not partition the bottom series."""


class SchemaError(CtrecError):
    """An input file violates its declared format."""


class MissingCell(CtrecError):
    """A required (series, order, step, replication) cell is absent."""


class ConfigError(CtrecError):
    """Malformed configuration file or unknown key/value."""

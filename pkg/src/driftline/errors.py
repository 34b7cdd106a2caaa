"""Exception hierarchy shared by every driftline module."""

from __future__ import annotations


class DriftlineError(Exception):
    """Base class for all driftline errors."""


class DomainError(DriftlineError, ValueError):
    """An argument lies outside the domain an operation accepts."""


class EmptySummaryError(DomainError):
    """A query needs at least one ingested value."""


class IncompatibleSketchError(DriftlineError, ValueError):
    """Two summaries differ in kind, parameters or seeds."""


class IncompatibleHistogramError(DriftlineError, ValueError):
    """Two histograms do not share bin edges."""


class SaturationError(DriftlineError, OverflowError):
    """A counter reached its maximum value and was clamped."""


class UnsupportedOperationError(DriftlineError):
    """The operation is defined in the interface but not for this object."""


class ConvergenceError(DriftlineError, RuntimeError):
    """An iterative fit stopped before converging."""

    def __init__(self, message: str, objective: float) -> None:
        super().__init__(message)
        self.objective = objective


class BackpressureError(DriftlineError):
    """A bounded buffer is full; the caller must drain or expire entries."""


class NotReadyError(DriftlineError):
    """Not enough data has accumulated to perform the operation."""


class DataError(DriftlineError, ValueError):
    """Input rows are malformed; ``indices`` lists the offending rows."""

    def __init__(self, message: str, indices: list[int]) -> None:
        super().__init__(message)
        self.indices = indices


class ConfigError(DriftlineError, ValueError):
    """Configuration is invalid; ``path`` names the offending field."""

    def __init__(self, message: str, path: str = "") -> None:
        super().__init__(f"{path}: {message}" if path else message)
        self.message = message
        self.path = path


class NotFoundError(DriftlineError, KeyError):
    pass


class ConflictError(DriftlineError):
    pass


class PartialReplayError(DriftlineError):
    """Part of a requested replay range was evicted."""

    def __init__(self, message: str, earliest_available: int) -> None:
        super().__init__(message)
        self.earliest_available = earliest_available

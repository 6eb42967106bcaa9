"""Exception hierarchy shared across the package."""


class MfnError(Exception):
    """Base class for all package-specific errors."""


class TransformDomainError(MfnError):
    """Stationarity transform applied outside its domain (e.g. log of <= 0)."""


class DuplicateSlotError(MfnError):
    """Two observations map to the same (series, period, intra-period slot)."""


class NoVintageError(MfnError):
    """Requested as-of date precedes every stored vintage."""


class RaggedEdgeError(MfnError):
    """A required high-frequency observation is missing from the panel."""


class DegenerateColumnError(MfnError):
    """Zero-variance column cannot be standardized."""


class DegenerateSpectrumError(MfnError):
    """Eigenvalue spectrum unusable for rank selection."""


class RankDeficiencyError(MfnError):
    """Linear system is rank deficient where full rank is required."""


class UnidentifiableError(MfnError):
    """Matrix completion input has an empty row or column."""


class ConvergenceError(MfnError):
    """Iterative procedure failed to converge; carries the last iterate."""

    def __init__(self, message, last_iterate=None):
        super().__init__(message)
        self.last_iterate = last_iterate


class SpanError(MfnError):
    """Not enough history to build the requested design."""


class ConfigError(MfnError):
    """Invalid run configuration."""


class DataError(MfnError):
    """Malformed or missing input data."""

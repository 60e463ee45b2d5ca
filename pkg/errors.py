# errors.py
"""Exception hierarchy for the incidence lab."""


class LabError(Exception):
    """Base class for every error raised by the lab."""


class ParameterError(LabError, ValueError):
    """Invalid or inconsistent parameters."""


class NormalizationError(ParameterError):
    """Line parameters outside the non-horizontal normalization."""


class CapacityError(ParameterError):
    """Requested configuration exceeds the size guard."""


class DomainError(LabError, ValueError):
    """Input outside the domain of an operation (empty set, out-of-range exponent)."""


class PreconditionError(LabError):
    """Missing certificate or unmet precondition."""


class ProbabilisticFailure(LabError):
    """A randomized construction failed its post-hoc checks on every retry."""

    def __init__(self, message, attempts=0):
        super().__init__(message)
        self.attempts = attempts


class InternalError(LabError):
    """A construction whose success is guaranteed did not succeed."""


class CertificateError(LabError):
    """A certificate check failed; ``report`` holds the diagnostics."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class ConfigError(LabError):
    """Unknown experiment, schema violation or unreadable config."""

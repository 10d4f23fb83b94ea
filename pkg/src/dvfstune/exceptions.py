"""Exception hierarchy shared by the toolkit modules."""


class DvfsError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(DvfsError, ValueError):
    """Malformed configuration document or option value."""


class FitError(DvfsError, ValueError):
    pass


class DegenerateInputError(FitError):
    """All abscissae coincide, so a slope cannot be identified."""


class InsufficientPointsError(FitError):
    pass


class DomainError(FitError):
    """A point falls outside the domain of the fitted transform (e.g. log of a non-positive value)."""


class TraceError(DvfsError, ValueError):
    """Base class for trace parsing and integration failures."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class MalformedRowError(TraceError):
    pass


class NonMonotoneTimestampError(TraceError):
    pass


class UnbalancedMarkerError(TraceError):
    pass


class UnknownKernelError(TraceError, KeyError):
    def __str__(self):
        return self.args[0]


class InsufficientDataError(TraceError):
    pass


class TimestampMismatchError(TraceError):
    pass


class SweepConflictError(TraceError):
    pass


class PlanError(DvfsError, ValueError):
    pass

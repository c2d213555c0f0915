"""Exception hierarchy shared by all modules."""


class VsrError(Exception):
    """Base class for toolkit errors."""


class ConfigError(VsrError, ValueError):
    """Bad configuration file or parameter value."""


class NonFiniteError(VsrError, ArithmeticError):
    """Simulation state became NaN or infinite."""


class UncodableFaultSetError(VsrError, ValueError):
    """A faulted switch set has no fault code."""


class EmptyDatasetError(VsrError, ValueError):
    pass


class TraceTooShortError(VsrError, ValueError):
    pass


class MalformedFileError(VsrError, ValueError):
    """File does not follow the expected text format."""


class VersionMismatchError(MalformedFileError):
    pass


class DimensionMismatchError(VsrError, ValueError):
    pass


class DivergedError(VsrError, ArithmeticError):
    """Training loss became non-finite."""


class RegimeMismatchError(VsrError, ValueError):
    pass


class FrameError(VsrError, ValueError):
    """Corrupted or truncated telemetry frame."""

"""Exception types shared across the package."""


class CfIsacError(Exception):
    """Base class for all package errors."""


class ConfigurationError(CfIsacError, ValueError):
    pass


class DegenerateGeometryError(CfIsacError, ValueError):
    """Raised when two points that must be distinct coincide."""


class ArgumentError(CfIsacError, ValueError):
    pass


class ResourceLimitError(CfIsacError, RuntimeError):
    """Raised when a brute-force routine is asked to run on an oversized grid."""


class ConfigParseError(CfIsacError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)

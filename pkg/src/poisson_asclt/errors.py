"""Exception hierarchy shared by all modules.

Each class carries the process exit code the command line front end maps it to.
"""


class AscltError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1


class ConfigError(AscltError, ValueError):
    exit_code = 2


class DomainError(AscltError, ValueError):
    """Invalid region, point configuration or sampling request."""

    exit_code = 2


class CoverageError(AscltError):
    """A master realization does not cover the window a caller asked for."""

    exit_code = 3


class DependencyError(AscltError):
    """A required upstream artifact (usually a calibration table) is missing."""

    exit_code = 4


class DegenerateModelError(AscltError):
    """A functional has zero variance or a score is undefined."""

    exit_code = 5


class UnsupportedError(AscltError, NotImplementedError):
    exit_code = 2


class PreconditionError(AscltError, ValueError):
    exit_code = 2


class FitError(AscltError, ValueError):
    """A decay or scaling fit was rejected."""

    exit_code = 5

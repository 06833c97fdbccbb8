"""Exception hierarchy shared by all nrbm modules."""


class NrbmError(Exception):
    """Base class for every error raised by this package."""

    exit_code = 1


class FormatError(NrbmError):
    exit_code = 3


class RangeError(NrbmError):
    exit_code = 3


class DimError(NrbmError):
    exit_code = 3


class VersionError(NrbmError):
    exit_code = 3


class CorruptError(NrbmError):
    exit_code = 3


class OracleSizeError(NrbmError):
    """Model too large for exhaustive enumeration."""

    exit_code = 4


class NumericError(NrbmError):
    """A computation produced NaN or Inf."""

    exit_code = 4


class DegenerateError(NrbmError):
    """A statistic is undefined for the given input."""

    exit_code = 4


class UsageError(NrbmError):
    exit_code = 2

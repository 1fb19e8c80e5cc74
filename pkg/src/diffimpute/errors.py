"""Exception classes shared across the package.

Each class maps to a distinct CLI exit code.
"""


class DiffImputeError(Exception):
    exit_code = 1


class ConfigError(DiffImputeError, ValueError):
    exit_code = 2


class DataError(DiffImputeError, ValueError):
    exit_code = 3


class SampleRejected(DataError):
    """Raised when a sample has no observed entries to split."""


class NumericError(DiffImputeError, ArithmeticError):
    exit_code = 4

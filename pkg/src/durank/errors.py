"""Exception hierarchy shared by every module.

Each class maps to one CLI exit code so scripts can tell failure classes apart.
"""


class DurankError(Exception):
    exit_code = 1


class ConfigError(DurankError, ValueError):
    exit_code = 2


class DataError(DurankError, ValueError):
    exit_code = 3


class IntegrityError(DataError):
    pass


class SegmentLookupError(DataError, LookupError):
    pass


class NumericError(DurankError, ArithmeticError):
    exit_code = 4


class ShapeError(NumericError, ValueError):
    pass


class FormatError(DurankError, ValueError):
    exit_code = 5


class ParseError(FormatError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line

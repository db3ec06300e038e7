"""Exception hierarchy.

Every error carries the CLI exit code it maps to: 3 for data/schema problems,
4 for numerical failures, 5 for I/O. Usage errors (2) come from argparse.
"""


class BnhpError(Exception):
    exit_code = 1


class DataError(BnhpError, ValueError):
    exit_code = 3


class NumericError(BnhpError, ArithmeticError):
    exit_code = 4


class EmptySequence(DataError):
    pass


class NonIncreasing(DataError):
    pass


class TooShort(DataError):
    pass


class ParseError(DataError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class SchemaError(DataError):
    pass


class InvalidParam(DataError):
    pass


class NonStationary(InvalidParam):
    pass


class ShapeMismatch(DataError):
    pass


class LengthMismatch(DataError):
    pass


class MissingLevel(DataError):
    pass


class EmptyData(DataError):
    pass


class DegenerateDesign(NumericError):
    pass


class UnsupportedPrimitive(BnhpError, TypeError):
    exit_code = 4


class NonFinite(NumericError):
    pass


class NoBracket(NumericError):
    pass


class MaxIter(NumericError):
    pass


class Diverged(NumericError):
    pass


class NotConverged(NumericError):
    pass


class ZeroVariance(NumericError):
    pass


class CheckpointError(DataError):
    pass

"""Exception hierarchy. Each class maps to one CLI exit code."""


class JointTSError(Exception):
    exit_code = 1


class ConfigError(JointTSError, ValueError):
    exit_code = 2


class ShapeError(ConfigError):
    """Array dimensions disagree with what an operation or model expects."""


class DataError(JointTSError, ValueError):
    exit_code = 3


class ParseError(DataError):
    def __init__(self, message: str, row: int | None = None, col: int | None = None):
        super().__init__(message)
        self.row = row
        self.col = col


class NumericError(JointTSError, ArithmeticError):
    exit_code = 4


class StateError(JointTSError, RuntimeError):
    pass

"""Exception hierarchy.

``DataError`` subclasses signal bad inputs (exit code 2 at the CLI);
``RuntimeFailure`` subclasses signal failures during computation (exit code 3).
"""


class GmattError(Exception):
    pass


class DataError(GmattError):
    pass


class RuntimeFailure(GmattError):
    pass


class UnknownCharacter(DataError):
    def __init__(self, position: int, char: str = ""):
        self.position = position
        super().__init__(f"unknown character {char!r} at position {position}")


class ParseError(DataError):
    def __init__(self, position: int, message: str = "not in grammar"):
        self.position = position
        super().__init__(f"{message} (position {position})")


class DepthExceeded(DataError):
    pass


class LengthExceeded(DataError):
    pass


class MalformedLine(DataError):
    def __init__(self, line_no: int, message: str = "malformed line"):
        self.line_no = line_no
        super().__init__(f"line {line_no}: {message}")


class BadClass(DataError):
    def __init__(self, line_no: int, value: str):
        self.line_no = line_no
        super().__init__(f"line {line_no}: reaction class {value!r} not in 1..10")


class MissingClass(DataError):
    pass


class LengthMismatch(DataError):
    pass


class EmptyBatch(DataError):
    pass


class CorruptCheckpoint(DataError):
    pass


class ConfigMismatch(DataError):
    pass


class ShapeMismatch(RuntimeFailure):
    pass


class IndexOutOfRange(RuntimeFailure):
    pass


class NonFiniteGradient(RuntimeFailure):
    pass


class NonFiniteLoss(RuntimeFailure):
    def __init__(self, message: str, last_good=None):
        self.last_good = last_good
        super().__init__(message)

"""Exception hierarchy shared by every module."""


class UltramedianError(Exception):
    """Base class for all package errors."""


class DomainError(UltramedianError, ValueError):
    """An argument lies outside the domain of an operation."""


class FormatError(UltramedianError, ValueError):
    """Input data is malformed (not square, NaN, negative, bad tree...)."""


class ParseError(FormatError):
    """A text instance could not be parsed; carries the 1-based position."""

    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column

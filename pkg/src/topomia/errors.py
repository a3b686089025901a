"""Exception hierarchy.

The CLI maps the three top-level families onto exit codes: ConfigError -> 2,
DataError -> 3, DivergenceError -> 4.
"""


class TopomiaError(Exception):
    """Base class for all package errors."""


class ConfigError(TopomiaError, ValueError):
    pass


class DataError(TopomiaError, ValueError):
    pass


class DivergenceError(TopomiaError, ArithmeticError):
    """Training objective became non-finite."""


class DegenerateClassError(DataError):
    """A score set lacks members or non-members."""


class InsufficientSamplesError(DataError):
    pass


class EmptyReferencesError(DataError):
    pass


class MissingEmbeddingError(DataError, KeyError):
    def __str__(self) -> str:
        return Exception.__str__(self)


class DimensionMismatchError(TopomiaError, ValueError):
    pass


class ShapeMismatchError(TopomiaError, ValueError):
    pass


class ExhaustionError(DataError):
    """Not enough distinct scene tuples to build disjoint member/non-member sets."""


class ParseError(DataError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DuplicateKeyError(DataError):
    pass

"""
Domain error hierarchy shared by the command line and the HTTP service.

Each family maps to one process exit code (see ``exit_code_for``).
"""
from fastapi import HTTPException
from pydantic import ValidationError

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_NUMERIC = 2
EXIT_IO = 3


class EblError(Exception):
    """Base class for every error raised by the lithography pipeline."""


class EblValidationError(EblError, ValueError):
    """Invalid input: configuration, parameters or model invariants."""


class GeometryError(EblValidationError):
    """A polygon violates the layout invariants; carries the shape name."""

    def __init__(self, shape: str, message: str):
        self.shape = shape
        super().__init__(f"shape '{shape}': {message}")


class NumericError(EblError, ArithmeticError):
    """A computation could not produce a valid result."""


class InsufficientDataError(NumericError):
    pass


class PecDivergenceError(NumericError):
    def __init__(self, message: str, residuals: list[float]):
        self.residuals = residuals
        trace = ', '.join(f'{r:.4g}' for r in residuals)
        super().__init__(f'{message} (residuals: {trace})')


class FormatError(EblError, OSError):
    """Malformed, truncated or unreadable file."""

    def __init__(self, message: str, line: int | None = None,
                 column: int | None = None):
        self.line = line
        self.column = column
        if line is not None:
            message = f'line {line}, column {column or 1}: {message}'
        super().__init__(message)


def exit_code_for(error: BaseException) -> int:
    """
    The exit_code_for function maps an exception to the command line exit
    code: 1 validation, 2 runtime/numeric, 3 I/O.

    :param error: Raised exception
    :return: Process exit code
    """
    if isinstance(error, (EblValidationError, ValidationError)):
        return EXIT_VALIDATION
    if isinstance(error, (FormatError, OSError)):
        return EXIT_IO
    return EXIT_NUMERIC


def http_status_for(error: BaseException) -> int:
    """
    The http_status_for function maps an exception to the status code the
    service answers with: 400 validation, 422 numeric, 500 otherwise.

    :param error: Raised exception
    :return: HTTP status code
    """
    if isinstance(error, (EblValidationError, ValidationError, FormatError)):
        return 400
    if isinstance(error, NumericError):
        return 422
    return 500


def to_http_exception(error: BaseException) -> HTTPException:
    return HTTPException(status_code=http_status_for(error), detail=str(error))

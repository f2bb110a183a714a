"""Exception hierarchy shared by the library and the CLI."""


class GamselError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInputError(GamselError, ValueError):
    """Malformed arguments: wrong shapes, non-finite values, bad flags."""


class OutOfRangeError(InvalidInputError):
    """A numeric argument lies outside its admissible interval."""


class NumericalDegeneracyError(GamselError, ArithmeticError):
    """A decomposition produced values that make the computation meaningless."""

    def __init__(self, message, variable=None):
        if variable is not None:
            message = f"variable {variable!r}: {message}"
        super().__init__(message)
        self.variable = variable


class RankDeficiencyError(NumericalDegeneracyError):
    """Too few rows remain to support the requested basis."""


class ConvergenceError(GamselError, RuntimeError):
    """The iterative solver hit its iteration cap."""

    def __init__(self, message, lambda_index=None):
        if lambda_index is not None:
            message = f"{message} (lambda index {lambda_index})"
        super().__init__(message)
        self.lambda_index = lambda_index


class DegenerateResponseError(InvalidInputError):
    """The response carries no information (e.g. all-equal binary labels)."""


class SchemaError(GamselError, ValueError):
    """A serialized model could not be decoded."""

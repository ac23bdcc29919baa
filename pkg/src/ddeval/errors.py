"""Exception types shared across the toolkit.

The CLI maps these onto exit codes: ``DataError`` -> 2, ``NumericError`` -> 3.
"""


class DataError(ValueError):
    """Malformed, empty or mismatched input data."""


class NumericError(ArithmeticError):
    """A numerical procedure failed (non-convergence, singular matrix, ...)."""

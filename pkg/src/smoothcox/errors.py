"""Exception hierarchy shared across the package.

Validation errors indicate bad inputs (cohort files, model specs, request
payloads) and map to CLI exit code 1 / HTTP 422.  Numerical errors indicate
a fit that could not be completed and map to exit code 2.
"""


class SmoothCoxError(Exception):
    """Base class for all package errors."""


class DataValidationError(SmoothCoxError):
    """Invalid input data or configuration."""


class NumericalError(SmoothCoxError):
    """A numerical procedure failed (non-convergence, rank deficiency)."""

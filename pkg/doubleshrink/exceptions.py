"""Custom exceptions for doubleshrink.

Errors fall into two families. ``InputError`` covers anything wrong with what
the caller handed in (bad data, out-of-range parameters, unreadable config)
and maps to CLI exit code 2. ``NumericalError`` covers estimator breakdowns on
otherwise valid input and maps to exit code 3.
"""

from __future__ import annotations

from typing import Optional


class DoubleShrinkError(Exception):
    """Base exception for all doubleshrink errors."""

    exit_code: int = 1


class InputError(DoubleShrinkError):
    """Base class for errors in user supplied data or parameters."""

    exit_code = 2


class NumericalError(DoubleShrinkError):
    """Base class for numerical failures of the estimators."""

    exit_code = 3


class InvalidDataError(InputError):
    """Input data violates a structural or finiteness requirement."""

    def __init__(self, message: str, row: Optional[int] = None, column: Optional[str] = None):
        self.row = row
        self.column = column
        if row is not None and column is not None:
            message = f"{message} (row {row}, column '{column}')"
        super().__init__(message)


class InvalidParameterError(InputError):
    """A parameter is outside its admissible range."""

    def __init__(self, name: str, value: object, expected: str) -> None:
        self.name = name
        self.value = value
        self.expected = expected
        super().__init__(f"Invalid {name}={value!r}: expected {expected}.")


class ConfigError(InputError):
    """Error reading or parsing a configuration file."""

    pass


class SingularCovarianceError(NumericalError):
    """A matrix that must be inverted is (numerically) singular."""

    def __init__(self, detail: str = "") -> None:
        message = "Covariance matrix is singular"
        if detail:
            message = f"{message}: {detail}"
        super().__init__(message)


class DegenerateSolutionError(NumericalError):
    """The GMV normalization 1'S^+1 vanished."""

    def __init__(self, value: float) -> None:
        self.value = value
        super().__init__(f"Degenerate GMV solution: 1'S^+1 = {value:.3e}.")


class KernelDegenerateError(NumericalError):
    """A random-matrix kernel left its admissible domain."""

    def __init__(self, eta: float, detail: str) -> None:
        self.eta = eta
        super().__init__(f"Degenerate kernel at eta={eta:.6g}: {detail}.")


class ConvergenceFailureError(NumericalError):
    """The fixed-point solver did not converge."""

    def __init__(self, iterations: int, residual: float) -> None:
        self.iterations = iterations
        self.residual = residual
        super().__init__(
            f"Fixed-point solver failed after {iterations} iterations "
            f"(residual {residual:.3e})."
        )


class LossDegenerateError(NumericalError):
    """The bona fide loss denominator is not positive."""

    def __init__(self, lam: float, denominator: float) -> None:
        self.lam = lam
        self.denominator = denominator
        super().__init__(
            f"Loss denominator {denominator:.3e} is not positive at lambda={lam:.6g}."
        )


class OptimizationFailureError(NumericalError):
    """No admissible point was found by the lambda search."""

    def __init__(self, message: str) -> None:
        super().__init__(message)

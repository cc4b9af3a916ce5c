"""Exception types shared across the package."""

from __future__ import annotations


class RecycleError(Exception):
    """Base class for all package errors."""


class DomainError(RecycleError, ValueError):
    """A model was evaluated outside its admissible region or at a singularity."""


class SingularNormalEquations(RecycleError, ArithmeticError):
    """The damped normal equations could not be factorised."""


class DegenerateWeights(RecycleError, ValueError):
    """Weights cannot be standardised or leave too few observations to fit."""


class NonPositiveVariance(RecycleError, ArithmeticError):
    """A quadratic form c' Sigma c was not strictly positive."""


class TooFewReplicates(RecycleError, ValueError):
    """Not enough usable replicates to form an interval."""


class EmptySample(RecycleError, ValueError):
    """A statistic was requested on an empty sample."""


class ParseError(RecycleError, ValueError):
    """Malformed input file.  ``line`` and ``column`` are 1-based when known."""

    def __init__(self, message: str, *, path=None, line: int | None = None, column=None):
        self.path = path
        self.line = line
        self.column = column
        where = []
        if path is not None:
            where.append(str(path))
        if line is not None:
            where.append(f"line {line}")
        if column is not None:
            where.append(f"column {column}")
        prefix = ":".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)


class MissingDataMarker(ParseError):
    """A NIST StRD file had no ``Data:`` line introducing the observations."""

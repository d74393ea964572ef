"""Exceptions and warnings raised by chaoscast."""

from __future__ import annotations

from typing import Any


class ChaosCastError(Exception):
    """Base class of all chaoscast errors."""


class SeriesTooShortError(ChaosCastError, ValueError):
    """The series has fewer samples than the estimator needs."""


class DegenerateSeriesError(ChaosCastError, ValueError):
    """The series is (numerically) constant."""


class InsufficientPointsError(ChaosCastError, ValueError):
    """An embedding has too few points for the requested statistic."""


class NonFiniteSeriesError(ChaosCastError, ValueError):
    """The series contains NaN or infinite values."""


class ShapeMismatchError(ChaosCastError, ValueError):
    """Operand shapes are incompatible."""


class NonScalarLossError(ChaosCastError, ValueError):
    """Backward was called on a tensor that is not a scalar."""


class RankDeficientError(ChaosCastError, ValueError):
    """A matrix that must have full row rank does not."""


class NonPositiveVarianceError(ChaosCastError, ValueError):
    """A predicted variance is zero or negative."""


class ConfigError(ChaosCastError, ValueError):
    """A configuration value is missing, unknown or invalid."""

    def __init__(self, field: str, reason: str) -> None:
        self.field = field
        super().__init__(f"config field '{field}': {reason}")


class ModelFormatError(ChaosCastError, ValueError):
    """A model file is not a valid CCKT container."""


class NonFiniteLossError(ChaosCastError, ArithmeticError):
    """Training produced a NaN or infinite loss.

    :param message: human readable summary.
    :param state: diagnostic dump (epoch, batch, loss terms, gradient and parameter norms).
    """

    def __init__(self, message: str, state: dict[str, Any]) -> None:
        self.state = state
        super().__init__(message)


class IsolatedNodeWarning(UserWarning):
    """A node has no neighbour within the local attention radius."""


class ProfileFormatError(ChaosCastError, ValueError):
    """A serialized chaos profile is missing slots or holds invalid values."""

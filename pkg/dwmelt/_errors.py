from __future__ import annotations

from typing import Any

__all__ = (
    "DwmeltError",
    "ParameterError",
    "ShapeError",
    "OperatorLookupError",
    "UnsupportedBasisError",
    "AnnihilationError",
    "InsufficientDataError",
    "TrackingError",
    "AccuracyError",
    "ConvergenceError",
    "CheckpointError",
    "exit_code_for",
)


class DwmeltError(Exception):
    """
    Base class for all errors raised by dwmelt.

    Subclasses also derive from the closest builtin exception, so callers that only
    care about, say, ``ValueError`` keep working.
    """

    exit_code: int = 1

    def __init__(self, message: str, **extra: Any) -> None:
        super().__init__(message)
        self.message = message
        self.extra = extra

    def to_record(self) -> dict[str, Any]:
        """
        Machine-readable description of the error, as written by the runner.
        """
        record: dict[str, Any] = {
            "error": type(self).__name__,
            "message": self.message,
            "exit_code": self.exit_code,
        }
        for key, value in self.extra.items():
            record[key] = _jsonable(value)
        return record


class ParameterError(DwmeltError, ValueError):
    exit_code = 2


class ShapeError(DwmeltError, ValueError):
    exit_code = 2


class OperatorLookupError(DwmeltError, KeyError):
    exit_code = 2

    # KeyError quotes its argument in str(); keep the plain message instead.
    def __str__(self) -> str:
        return self.message


class UnsupportedBasisError(DwmeltError, TypeError):
    exit_code = 2


class AnnihilationError(DwmeltError, ValueError):
    exit_code = 2


class InsufficientDataError(DwmeltError, KeyError):
    exit_code = 2

    def __str__(self) -> str:
        return self.message


class TrackingError(DwmeltError, RuntimeError):
    exit_code = 3


class AccuracyError(DwmeltError, ArithmeticError):
    """
    A time step could not be certified within the fidelity threshold.

    The residual estimate that failed is kept on ``.residual``.
    """

    exit_code = 3

    def __init__(self, message: str, *, residual: float, **extra: Any) -> None:
        super().__init__(message, residual=residual, **extra)
        self.residual = residual


class ConvergenceError(DwmeltError, ArithmeticError):
    """
    The ground-state sweeps ran out of budget.

    The energy after every sweep is kept on ``.energies``.
    """

    exit_code = 3

    def __init__(self, message: str, *, energies: list[float], **extra: Any) -> None:
        super().__init__(message, energies=energies, **extra)
        self.energies = energies


class CheckpointError(DwmeltError, OSError):
    exit_code = 4


def exit_code_for(e: BaseException) -> int:
    """
    CLI exit code for an exception: 2 parameter, 3 accuracy/convergence, 4 I/O.
    """
    if isinstance(e, DwmeltError):
        return e.exit_code
    if isinstance(e, OSError):
        return 4
    if isinstance(e, (ValueError, KeyError, TypeError)):
        return 2
    return 1


def _jsonable(value: Any) -> Any:
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]  # pyright: ignore[reportUnknownVariableType]
    if isinstance(value, (str, int, bool)) or value is None:
        return value
    try:
        return float(value)
    except (TypeError, ValueError):
        return str(value)

from __future__ import annotations

from typing import Optional


class HDGError(Exception):
    """Base class for every error raised by hdg_interp."""


class ConfigurationError(HDGError, ValueError):
    pass


class UnsupportedDegreeError(ConfigurationError):
    pass


class MeshIntegrityError(HDGError, ValueError):
    pass


class LinearAlgebraError(HDGError, RuntimeError):
    def __init__(self, message: str, condition: Optional[float] = None) -> None:
        if condition is not None:
            message = f"{message} (condition estimate {condition:.3e})"
        super().__init__(message)
        self.condition = condition


class PostprocessError(LinearAlgebraError):
    pass


class EvaluationError(HDGError, ArithmeticError):
    pass


class StepConvergenceError(HDGError, RuntimeError):
    def __init__(self, t: float, iterations: int, increment: float) -> None:
        super().__init__(
            f"nonlinear iteration did not converge at t={t:.6g} after "
            f"{iterations} iterations (last increment {increment:.3e})"
        )
        self.t = t
        self.iterations = iterations
        self.increment = increment

"""Error vocabulary shared by every stgpod module."""

from __future__ import annotations

from typing import Optional


class StgpodError(Exception):
    """Base class for all errors raised by this package."""


class InvalidArgumentError(StgpodError, ValueError):
    """Bad sizes, mismatched dimensions or empty inputs."""


class OutOfDomainError(InvalidArgumentError):
    """A time or space coordinate outside the discretized interval."""


class InvalidConfigurationError(StgpodError, ValueError):
    """An experiment or basis configuration that cannot be honoured."""


class SolverFailure(StgpodError, RuntimeError):
    """A nonlinear or linear solve that did not reach its tolerance.

    ``step`` is the time-step index for marching solvers and ``None`` for
    all-at-once solves; ``iterations`` counts Newton (or BFGS) iterations.
    """

    def __init__(
        self,
        message: str,
        step: Optional[int] = None,
        residual: Optional[float] = None,
        iterations: Optional[int] = None,
    ):
        details = []
        if step is not None:
            details.append(f"step={step}")
        if iterations is not None:
            details.append(f"iterations={iterations}")
        if residual is not None:
            details.append(f"residual={residual:.3e}")
        if details:
            message = f"{message} ({', '.join(details)})"
        super().__init__(message)
        self.step = step
        self.residual = residual
        self.iterations = iterations

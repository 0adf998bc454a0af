"""Full-order Burgers state and adjoint solves (implicit Euler + Newton)."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np
import scipy.sparse as sps
import scipy.sparse.linalg as spsla
from scipy.interpolate import interp1d

from stgpod.errors import InvalidArgumentError, SolverFailure
from stgpod.fem_space import SpatialOperators

logger = logging.getLogger(__name__)

NEWTON_TOL = 1e-10
NEWTON_MAX_ITER = 50


# ---------------------------------------------------------------------------
# Types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Trajectory:
    """Coefficient vectors ``values[j]`` at the instants ``times[j]``."""

    times: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)
    kind: str = "state"

    def __post_init__(self):
        if self.values.ndim != 2 or self.values.shape[0] != self.times.size:
            raise InvalidArgumentError(
                f"{self.values.shape} values do not match {self.times.size} instants"
            )
        if self.times.size < 2:
            raise InvalidArgumentError("a trajectory needs at least two instants")

    @property
    def n_t(self) -> int:
        return self.times.size - 1

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    def sample(self, times) -> np.ndarray:
        """Coefficients at ``times``, linear between the stored instants."""
        return interp1d(self.times, self.values, axis=0, assume_sorted=True)(times)

    def to_csv(self, path: Union[str, Path]) -> None:
        """One row per instant, header ``t,xi_1,...,xi_q``."""
        q = self.values.shape[1]
        header = ",".join(["t"] + [f"xi_{i}" for i in range(1, q + 1)])
        np.savetxt(
            path, np.column_stack([self.times, self.values]),
            delimiter=",", header=header, comments="", fmt="%.12g",
        )


@dataclass(frozen=True)
class ControlFunction:
    """Spatial coefficient vectors on a time grid.

    ``kind="linear"`` interpolates between the grid instants; ``kind="next"``
    holds ``values[j+1]`` on (t_j, t_{j+1}], the control an implicit Euler
    step on that grid sees.
    """

    times: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)
    kind: str = "linear"

    def __post_init__(self):
        if self.kind not in ("linear", "next"):
            raise InvalidArgumentError(f"unknown control interpolation {self.kind!r}")

    @classmethod
    def zero(cls, q: int, horizon: float) -> "ControlFunction":
        return cls(times=np.array([0.0, horizon]), values=np.zeros((2, q)))

    def sample(self, times) -> np.ndarray:
        return interp1d(self.times, self.values, axis=0, kind=self.kind, assume_sorted=True)(times)


def trapezoid_weights(times: np.ndarray) -> np.ndarray:
    dt = np.diff(times)
    weights = np.zeros(times.size)
    weights[:-1] += 0.5 * dt
    weights[1:] += 0.5 * dt
    return weights


def _as_target(target, times: np.ndarray, q: int) -> np.ndarray:
    target = np.asarray(target, dtype=float)
    if target.ndim == 1:
        target = np.broadcast_to(target, (times.size, target.size))
    if target.shape != (times.size, q):
        raise InvalidArgumentError(
            f"target of shape {target.shape} does not match {(times.size, q)}"
        )
    return target


# ---------------------------------------------------------------------------
# Step operators
# ---------------------------------------------------------------------------

def state_step_jacobian(
    ops: SpatialOperators, nu: float, x: np.ndarray, dt: float,
    nonlinear: bool = True,
) -> sps.csc_matrix:
    """Derivative of one implicit Euler step residual at ``x``."""
    jac = ops.mass / dt + nu * ops.stiffness
    if nonlinear:
        jac = jac + ops.convection_jacobian(x)
    return sps.csc_matrix(jac)


def adjoint_step_operator(
    ops: SpatialOperators, nu: float, x: np.ndarray, dt: float,
    nonlinear: bool = True,
) -> sps.csc_matrix:
    """Matrix of one backward Euler adjoint step with the state frozen at ``x``."""
    op = ops.mass / dt + nu * ops.stiffness
    if nonlinear:
        op = op + ops.convection_jacobian(x).T
    return sps.csc_matrix(op)


# ---------------------------------------------------------------------------
# Solves
# ---------------------------------------------------------------------------

def solve_state_forward(
    ops: SpatialOperators,
    nu: float,
    x0: np.ndarray,
    u: Optional[ControlFunction],
    n_t: int,
    horizon: float,
    nonlinear: bool = True,
    tol: float = NEWTON_TOL,
    max_iter: int = NEWTON_MAX_ITER,
) -> Trajectory:
    """March M(x_{j+1} - x_j)/dt + nu K x_{j+1} + H(x_{j+1}) = M u_{j+1}."""
    if n_t < 1:
        raise InvalidArgumentError(f"need at least one time step, got n_t={n_t}")
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (ops.q,):
        raise InvalidArgumentError(f"x0 has shape {x0.shape}, expected ({ops.q},)")

    times = np.linspace(0.0, horizon, n_t + 1)
    dt = horizon / n_t
    forcing = None if u is None else ops.mass @ u.sample(times).T

    values = np.zeros((n_t + 1, ops.q))
    values[0] = x0
    linear = ops.mass / dt + nu * ops.stiffness
    total_iters = 0
    for j in range(n_t):
        rhs = ops.mass @ values[j] / dt
        if forcing is not None:
            rhs = rhs + forcing[:, j + 1]
        x = values[j].copy()
        for it in range(max_iter + 1):
            res = linear @ x - rhs
            if nonlinear:
                res += ops.convection(x)
            resnorm = np.abs(res).max()
            if resnorm < tol:
                break
            if it == max_iter:
                raise SolverFailure(
                    "Newton did not converge in the state step",
                    step=j + 1, residual=resnorm, iterations=it,
                )
            jac = state_step_jacobian(ops, nu, x, dt, nonlinear)
            x -= spsla.spsolve(jac, res)
        total_iters += it
        values[j + 1] = x
    logger.debug("state solve: %d steps, %d Newton iterations", n_t, total_iters)
    return Trajectory(times=times, values=values, kind="state")


def solve_adjoint_backward(
    ops: SpatialOperators,
    nu: float,
    state: Trajectory,
    target,
    nonlinear: bool = True,
) -> Trajectory:
    """Backward Euler for -M dl/dt + nu K l + DN(x)^T l = M (x* - x), l(T) = 0."""
    if state.values.shape[1] != ops.q:
        raise InvalidArgumentError(
            f"state has {state.values.shape[1]} coefficients, expected {ops.q}"
        )
    times = state.times
    target = _as_target(target, times, ops.q)
    source = (ops.mass @ (target - state.values).T).T

    values = np.zeros_like(state.values)
    for j in range(state.n_t - 1, -1, -1):
        dt = times[j + 1] - times[j]
        op = adjoint_step_operator(ops, nu, state.values[j], dt, nonlinear)
        rhs = ops.mass @ values[j + 1] / dt + source[j]
        values[j] = spsla.spsolve(op, rhs)
    return Trajectory(times=times, values=values, kind="adjoint")


def evaluate_cost(
    ops: SpatialOperators,
    state: Trajectory,
    target,
    u: Optional[ControlFunction],
    alpha: float,
) -> Tuple[float, float]:
    """Return (tracking, J) with M_Y in space and trapezoidal weights in time."""
    weights = trapezoid_weights(state.times)
    diff = state.values - _as_target(target, state.times, ops.q)
    tracking = 0.5 * float(weights @ np.einsum("ji,ji->j", diff, (ops.mass @ diff.T).T))
    if u is None:
        return tracking, tracking
    uu = u.sample(state.times)
    control = 0.5 * alpha * float(weights @ np.einsum("ji,ji->j", uu, (ops.mass @ uu.T).T))
    return tracking, tracking + control

"""Classical snapshot POD with an adjoint gradient and BFGS.

The comparison method: a POD basis from state snapshots, an implicit Euler
discretization of the reduced state equation, the gradient of the reduced
cost from the discrete adjoint, and a dense BFGS iteration on the stacked
reduced control (u_0, ..., u_nt).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np
import scipy.linalg as spla

from stgpod.errors import InvalidArgumentError, SolverFailure
from stgpod.fem_space import SpatialOperators
from stgpod.full_order import ControlFunction, trapezoid_weights
from stgpod.timing import Timer

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# POD basis
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ClassicalPodBasis:
    U: np.ndarray = field(repr=False)
    snapshots: np.ndarray = field(repr=False)
    sigma: np.ndarray = field(repr=False)
    mass_weighted: bool = False

    @property
    def dim(self) -> int:
        return self.U.shape[1]


def classical_pod(
    snapshots: np.ndarray, qhat: int, ops: Optional[SpatialOperators] = None
) -> ClassicalPodBasis:
    """Leading left singular vectors of the snapshot matrix.

    Given ``ops`` the SVD is taken of L_Y^T X and the modes are mapped back
    with L_Y^{-T}, so they are orthonormal in the mass inner product.
    """
    snapshots = np.asarray(snapshots, dtype=float)
    q, s = snapshots.shape
    if not 1 <= qhat <= min(q, s):
        raise InvalidArgumentError(f"qhat={qhat} outside 1..{min(q, s)}")
    data = snapshots if ops is None else ops.chol.T @ snapshots
    left, sigma, _ = spla.svd(data, full_matrices=False)
    U = left[:, :qhat]
    if ops is not None:
        U = ops.chol_solve_transposed(U)
    if sigma[qhat - 1] <= 1e-14 * max(sigma[0], 1.0):
        logger.warning("snapshot matrix has rank below qhat=%d", qhat)
    return ClassicalPodBasis(U=U, snapshots=snapshots, sigma=sigma, mass_weighted=ops is not None)


# ---------------------------------------------------------------------------
# Reduced problem
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ReducedLagrangianProblem:
    """Implicit Euler reduced model; costs use trapezoidal weights in time."""

    U: np.ndarray = field(repr=False)
    spatial: SpatialOperators = field(repr=False)
    mass: np.ndarray = field(repr=False)
    stiffness: np.ndarray = field(repr=False)
    x0: np.ndarray = field(repr=False)
    target: np.ndarray = field(repr=False)        # U^T M x*_j, one row per instant
    target_energy: np.ndarray = field(repr=False)  # x*_j^T M x*_j
    nu: float
    alpha: float
    horizon: float
    n_t: int
    nonlinear: bool = True
    newton_tol: float = 1e-12
    newton_max_iter: int = 50

    @property
    def dt(self) -> float:
        return self.horizon / self.n_t

    @property
    def qhat(self) -> int:
        return self.U.shape[1]

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.horizon, self.n_t + 1)

    @property
    def weights(self) -> np.ndarray:
        """Trapezoidal quadrature weights on :attr:`times`."""
        return trapezoid_weights(self.times)

    @property
    def size(self) -> int:
        return (self.n_t + 1) * self.qhat

    def convection(self, xh: np.ndarray) -> np.ndarray:
        return self.U.T @ self.spatial.convection(self.U @ xh)

    def convection_jacobian(self, xh: np.ndarray) -> np.ndarray:
        return self.U.T @ (self.spatial.convection_jacobian(self.U @ xh) @ self.U)

    def step_matrix(self, xh: np.ndarray) -> np.ndarray:
        jac = self.mass / self.dt + self.nu * self.stiffness
        if self.nonlinear:
            jac = jac + self.convection_jacobian(xh)
        return jac


def build_reduced_problem(
    basis: ClassicalPodBasis,
    ops: SpatialOperators,
    nu: float,
    alpha: float,
    x0: np.ndarray,
    xstar: np.ndarray,
    n_t: int,
    horizon: float,
    nonlinear: bool = True,
) -> ReducedLagrangianProblem:
    """``xstar`` is a FEM vector (constant target) or one row per instant."""
    if n_t < 1:
        raise InvalidArgumentError(f"need at least one time step, got n_t={n_t}")
    U = basis.U
    mass = U.T @ (ops.mass @ U)
    xstar = np.asarray(xstar, dtype=float)
    if xstar.ndim == 1:
        xstar = np.broadcast_to(xstar, (n_t + 1, ops.q))
    if xstar.shape != (n_t + 1, ops.q):
        raise InvalidArgumentError(f"target of shape {xstar.shape} does not fit {(n_t + 1, ops.q)}")
    weighted_target = (ops.mass @ xstar.T).T
    return ReducedLagrangianProblem(
        U=U, spatial=ops, mass=mass,
        stiffness=U.T @ (ops.stiffness @ U),
        x0=_solve_step(mass, U.T @ (ops.mass @ np.asarray(x0, dtype=float)), 0),
        target=weighted_target @ U,
        target_energy=np.einsum("ji,ji->j", xstar, weighted_target),
        nu=nu, alpha=alpha, horizon=horizon, n_t=n_t, nonlinear=nonlinear,
    )


def _solve_step(matrix: np.ndarray, rhs: np.ndarray, step: int) -> np.ndarray:
    try:
        return np.linalg.solve(matrix, rhs)
    except np.linalg.LinAlgError as err:
        raise SolverFailure(f"singular reduced system: {err}", step=step) from err


def reduced_forward(prob: ReducedLagrangianProblem, uh: np.ndarray) -> np.ndarray:
    """Implicit Euler for the reduced state, one row per instant."""
    dt = prob.dt
    xh = np.zeros((prob.n_t + 1, prob.qhat))
    xh[0] = prob.x0
    linear = prob.mass / dt + prob.nu * prob.stiffness
    for j in range(prob.n_t):
        rhs = prob.mass @ (xh[j] / dt + uh[j + 1])
        x = xh[j].copy()
        for it in range(prob.newton_max_iter + 1):
            res = linear @ x - rhs
            if prob.nonlinear:
                res += prob.convection(x)
            resnorm = np.abs(res).max()
            if resnorm < prob.newton_tol:
                break
            if it == prob.newton_max_iter:
                raise SolverFailure("reduced Newton did not converge", step=j + 1, residual=resnorm, iterations=it)
            x -= _solve_step(prob.step_matrix(x), res, j + 1)
        xh[j + 1] = x
    return xh


def reduced_cost(prob: ReducedLagrangianProblem, xh: np.ndarray, uh: np.ndarray) -> float:
    state = 0.5 * np.einsum("ji,ik,jk->j", xh, prob.mass, xh) - np.einsum("ji,ji->j", prob.target, xh)
    control = 0.5 * prob.alpha * np.einsum("ji,ik,jk->j", uh, prob.mass, uh)
    return float(prob.weights @ (state + 0.5 * prob.target_energy + control))


def reduced_lagrangian_gradient(
    prob: ReducedLagrangianProblem, uhat: np.ndarray
) -> Tuple[float, np.ndarray]:
    """Cost and gradient with respect to the stacked control (u_0, ..., u_nt)."""
    uhat = np.asarray(uhat, dtype=float)
    if uhat.shape != (prob.size,):
        raise InvalidArgumentError(f"control has shape {uhat.shape}, expected ({prob.size},)")
    dt = prob.dt
    weights = prob.weights
    uh = uhat.reshape(prob.n_t + 1, prob.qhat)
    xh = reduced_forward(prob, uh)

    lam = np.zeros((prob.n_t + 2, prob.qhat))
    for j in range(prob.n_t, 0, -1):
        rhs = prob.mass @ lam[j + 1] / dt - weights[j] * (prob.mass @ xh[j] - prob.target[j])
        lam[j] = _solve_step(prob.step_matrix(xh[j]).T, rhs, j)

    grad = prob.alpha * (weights[:, None] * uh) @ prob.mass
    grad[1:] -= lam[1:-1] @ prob.mass
    return reduced_cost(prob, xh, uh), grad.reshape(-1)


def lift_reduced_control(prob: ReducedLagrangianProblem, uhat: np.ndarray) -> ControlFunction:
    uh = np.asarray(uhat).reshape(prob.n_t + 1, prob.qhat)
    return ControlFunction(times=prob.times, values=uh @ prob.U.T, kind="next")


# ---------------------------------------------------------------------------
# BFGS
# ---------------------------------------------------------------------------

@dataclass
class BfgsResult:
    u: np.ndarray = field(repr=False)
    J: float
    iterations: int
    walltime: float
    status: str
    history: List[float] = field(default_factory=list, repr=False)


def bfgs_minimize(
    prob: ReducedLagrangianProblem,
    u0: Optional[np.ndarray] = None,
    target_j: Optional[float] = None,
    grad_tol: Optional[float] = None,
    max_iter: int = 500,
    armijo: float = 1e-4,
    max_halvings: int = 30,
    target_check: Optional[Callable[[np.ndarray], float]] = None,
) -> BfgsResult:
    """Dense BFGS on the inverse Hessian with Armijo backtracking.

    Stops when J <= ``target_j``, when ||grad||_inf <= ``grad_tol`` or after
    ``max_iter`` updates; the status names which. With ``target_check`` the
    target stop also needs ``target_check(u) <= target_j``, so the target can
    be judged on a finer model than the reduced one. Time spent in the check
    is left out of ``walltime``.
    """
    if target_j is None and grad_tol is None:
        raise InvalidArgumentError("bfgs_minimize needs target_j or grad_tol")
    u = np.zeros(prob.size) if u0 is None else np.array(u0, dtype=float)
    identity = np.eye(u.size)

    with Timer("bfgs") as timer:
        J, g = reduced_lagrangian_gradient(prob, u)
        gnorm = np.linalg.norm(g)
        H = identity / gnorm if gnorm > 0 else identity.copy()
        history = [J]
        status = "max-iter"
        it = 0
        checking = 0.0
        while True:
            if target_j is not None and J <= target_j:
                if target_check is None:
                    status = "target"
                    break
                with Timer() as check:
                    checked = target_check(u)
                checking += check.elapsed
                if checked <= target_j:
                    status = "target"
                    break
                logger.debug("reduced J=%.6g reached the target, checked J=%.6g did not", J, checked)
            if grad_tol is not None and np.abs(g).max() <= grad_tol:
                status = "converged"
                break
            if it >= max_iter:
                break
            p = -H @ g
            slope = g @ p
            if slope >= 0:
                H = identity / np.linalg.norm(g)
                p = -H @ g
                slope = g @ p
            step = 1.0
            for _ in range(max_halvings + 1):
                try:
                    J_new, g_new = reduced_lagrangian_gradient(prob, u + step * p)
                except SolverFailure:
                    J_new = np.inf
                if J_new <= J + armijo * step * slope:
                    break
                step *= 0.5
            else:
                status = "line-search-failed"
                logger.warning("line search failed after %d BFGS iterations", it)
                break
            s = step * p
            y = g_new - g
            ys = y @ s
            if ys > 1e-14 * np.linalg.norm(y) * np.linalg.norm(s):
                rho = 1.0 / ys
                left = identity - rho * np.outer(s, y)
                H = left @ H @ left.T + rho * np.outer(s, s)
            u, J, g = u + s, J_new, g_new
            history.append(J)
            it += 1
            logger.debug("bfgs iteration %d: J=%.6g, |g|_inf=%.3e", it, J, np.abs(g).max())

    logger.info("bfgs stopped (%s) after %d iterations, J=%.6g", status, it, J)
    return BfgsResult(
        u=u, J=J, iterations=it, walltime=timer.elapsed - checking, status=status, history=history
    )

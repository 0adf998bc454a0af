"""Reduced space-time Galerkin operators for the Burgers equation.

Reduced unknowns are coefficient matrices V (qhat x shat) of
sum_{l,i} V[l, i] nu_hat_l psi_hat_i, vectorized time-major:
vhat[i * qhat + l] = V[l, i]. Kronecker factors follow the time (x) space
order, so kron(A_time, B_space) @ vec(V) == vec(B_space @ V @ A_time.T).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Tuple

import numpy as np
import scipy.linalg as spla

from stgpod.errors import InvalidArgumentError, InvalidConfigurationError, SolverFailure
from stgpod.fem_space import SpatialOperators, trilinear_form
from stgpod.gen_pod import ReducedBases
from stgpod.time_basis import TimeBasis, evaluate_basis, triple_product

logger = logging.getLogger(__name__)


def vec(V: np.ndarray) -> np.ndarray:
    return V.T.reshape(-1)


def unvec(v: np.ndarray, qhat: int, shat: int) -> np.ndarray:
    return np.asarray(v).reshape(shat, qhat).T


def _solve_gram(gram: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.solve(gram, rhs)
    except np.linalg.LinAlgError as err:
        raise SolverFailure(f"singular reduced mass matrix: {err}") from err


# ---------------------------------------------------------------------------
# Quadratic form helpers shared with the optimality system
# ---------------------------------------------------------------------------

def quadratic_term(time_tensor: np.ndarray, space_tensor: np.ndarray, V: np.ndarray) -> np.ndarray:
    """H[l, i] = sum V[k, j] T[i, j, m] S[l, k, n] V[n, m]."""
    return np.einsum("lkn,kj,nm,ijm->li", space_tensor, V, V, time_tensor, optimize=True)


def quadratic_jacobian(time_tensor: np.ndarray, space_tensor: np.ndarray, V: np.ndarray) -> np.ndarray:
    """Derivative of :func:`quadratic_term` in vec ordering (symmetric tensors)."""
    shat, qhat = time_tensor.shape[0], space_tensor.shape[0]
    blocks = 2.0 * np.einsum("lkn,nm,ijm->iljk", space_tensor, V, time_tensor, optimize=True)
    return blocks.reshape(shat * qhat, V.shape[1] * V.shape[0])


# ---------------------------------------------------------------------------
# Reduced operators
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ReducedOperators:
    """Projected operators of one space-time reduced space.

    ``time_tensor[i]`` is the integral of psi_hat_i Psi Psi^T and
    ``space_tensor[l]`` the symmetrized integral of nu_hat_l Y dY^T/dxi.
    """

    mass_time: np.ndarray = field(repr=False)
    dmass_time: np.ndarray = field(repr=False)
    mass_space: np.ndarray = field(repr=False)
    stiff_space: np.ndarray = field(repr=False)
    time_tensor: np.ndarray = field(repr=False)
    space_tensor: np.ndarray = field(repr=False)
    load: np.ndarray = field(repr=False)
    space_coeffs: np.ndarray = field(repr=False)
    time_coeffs: np.ndarray = field(repr=False)
    spatial: SpatialOperators = field(repr=False)
    tb: TimeBasis = field(repr=False)
    time_mode: str = "plain"

    @property
    def qhat(self) -> int:
        return self.space_coeffs.shape[1]

    @property
    def shat(self) -> int:
        return self.time_coeffs.shape[1]

    @property
    def size(self) -> int:
        return self.qhat * self.shat

    def time_values(self, t) -> np.ndarray:
        """Rows (psi_hat_1(t), ..., psi_hat_shat(t))."""
        return evaluate_basis(self.tb, t) @ self.time_coeffs

    def project_space(self, x: np.ndarray) -> np.ndarray:
        """L2 projection coefficients of FEM vector(s) ``x`` onto span{nu_hat}."""
        return _solve_gram(self.mass_space, self.space_coeffs.T @ (self.spatial.mass @ x))

    def project_space_time(self, X: np.ndarray) -> np.ndarray:
        """Coefficients of the projection of the tensor coefficient matrix ``X`` (q x s)."""
        inner = self.space_coeffs.T @ (self.spatial.mass @ X) @ (self.tb.mass @ self.time_coeffs)
        left = _solve_gram(self.mass_space, inner)
        return _solve_gram(self.mass_time, left.T).T

    def lift(self, V: np.ndarray, times) -> np.ndarray:
        """FEM coefficients at ``times``, one row per instant."""
        return self.time_values(times) @ V.T @ self.space_coeffs.T


def project_operators(
    bases: ReducedBases,
    ops: SpatialOperators,
    tb: TimeBasis,
    forcing: Optional[np.ndarray] = None,
) -> ReducedOperators:
    """Project the full operators onto ``bases``.

    ``forcing`` is an optional q x s tensor coefficient matrix of the source
    term; without it the reduced load is zero.
    """
    B = bases.space.coefficients()
    C = bases.time.coefficients()
    if B.shape[0] != ops.q or C.shape[0] != tb.s:
        raise InvalidArgumentError(
            f"bases of sizes {B.shape[0]}x{C.shape[0]} do not fit q={ops.q}, s={tb.s}"
        )
    trilinear = trilinear_form(ops.space, B, B, B)
    space_tensor = 0.5 * (trilinear + trilinear.transpose(0, 2, 1))
    if forcing is None:
        load = np.zeros((B.shape[1], C.shape[1]))
    else:
        load = B.T @ (ops.mass @ forcing) @ (tb.mass @ C)
    reduced = ReducedOperators(
        mass_time=C.T @ (tb.mass @ C),
        dmass_time=C.T @ (tb.dmass @ C),
        mass_space=B.T @ (ops.mass @ B),
        stiff_space=B.T @ (ops.stiffness @ B),
        time_tensor=triple_product(tb, C, C, C),
        space_tensor=space_tensor,
        load=load,
        space_coeffs=B,
        time_coeffs=C,
        spatial=ops,
        tb=tb,
        time_mode=bases.time.mode,
    )
    logger.debug("projected operators onto qhat=%d, shat=%d", reduced.qhat, reduced.shat)
    return reduced


# ---------------------------------------------------------------------------
# Residual and Jacobian
# ---------------------------------------------------------------------------

def _check_size(ops: ReducedOperators, vhat: np.ndarray) -> np.ndarray:
    vhat = np.asarray(vhat, dtype=float)
    if vhat.shape != (ops.size,):
        raise InvalidArgumentError(f"vhat has shape {vhat.shape}, expected ({ops.size},)")
    return unvec(vhat, ops.qhat, ops.shat)


def linear_operator(ops: ReducedOperators, nu: float) -> np.ndarray:
    return np.kron(ops.dmass_time, ops.mass_space) + nu * np.kron(ops.mass_time, ops.stiff_space)


def reduced_residual(
    ops: ReducedOperators, nu: float, vhat: np.ndarray, nonlinear: bool = True
) -> np.ndarray:
    V = _check_size(ops, vhat)
    R = ops.mass_space @ V @ ops.dmass_time.T + nu * ops.stiff_space @ V @ ops.mass_time.T
    if nonlinear:
        R = R + quadratic_term(ops.time_tensor, ops.space_tensor, V)
    return vec(R - ops.load)


def reduced_jacobian(
    ops: ReducedOperators, nu: float, vhat: np.ndarray, nonlinear: bool = True
) -> np.ndarray:
    V = _check_size(ops, vhat)
    jac = linear_operator(ops, nu)
    if nonlinear:
        jac = jac + quadratic_jacobian(ops.time_tensor, ops.space_tensor, V)
    return jac


# ---------------------------------------------------------------------------
# Newton
# ---------------------------------------------------------------------------

def newton_solve(
    fun: Callable[[np.ndarray], np.ndarray],
    jac: Callable[[np.ndarray], np.ndarray],
    x0: np.ndarray,
    tol: float,
    max_iter: int,
    max_halvings: int = 20,
) -> Tuple[np.ndarray, int, float]:
    """Newton with backtracking on the residual 2-norm.

    Converged when the residual max-norm drops below ``tol``; returns the
    iterate, the iteration count and the final residual max-norm.
    """
    x = np.array(x0, dtype=float)
    res = fun(x)
    for it in range(max_iter + 1):
        resnorm = float(np.abs(res).max()) if res.size else 0.0
        logger.debug("newton iteration %d: residual %.3e", it, resnorm)
        if resnorm < tol:
            return x, it, resnorm
        if it == max_iter:
            break
        try:
            step = spla.solve(jac(x), -res)
        except (np.linalg.LinAlgError, ValueError) as err:
            raise SolverFailure(f"singular Newton system: {err}", iterations=it, residual=resnorm) from err
        current = np.linalg.norm(res)
        scale = 1.0
        for _ in range(max_halvings + 1):
            trial = x + scale * step
            trial_res = fun(trial)
            if np.all(np.isfinite(trial_res)) and np.linalg.norm(trial_res) < current:
                break
            scale *= 0.5
        x, res = trial, trial_res
    raise SolverFailure("Newton did not converge", iterations=max_iter, residual=resnorm)


def solve_reduced_state(
    ops: ReducedOperators,
    nu: float,
    x0_coeffs: np.ndarray,
    initial_guess: Optional[np.ndarray] = None,
    tol: float = 1e-10,
    max_iter: int = 50,
) -> Tuple[np.ndarray, int]:
    """Solve the reduced forward system with the initial block eliminated.

    Returns the coefficient matrix V (qhat x shat) and the Newton count.
    """
    if ops.time_mode != "initial-value":
        raise InvalidConfigurationError("the reduced state solve needs an initial-value time basis")
    qhat, shat = ops.qhat, ops.shat
    start = ops.time_values(0.0)
    V = np.zeros((qhat, shat)) if initial_guess is None else np.array(initial_guess, dtype=float)
    V[:, 0] = np.asarray(x0_coeffs) / start[0]
    if shat == 1:
        return V, 0
    free = np.arange(qhat, qhat * shat)
    full = vec(V)

    def _embed(z):
        v = full.copy()
        v[free] = z
        return v

    z, iters, _ = newton_solve(
        lambda z: reduced_residual(ops, nu, _embed(z))[free],
        lambda z: reduced_jacobian(ops, nu, _embed(z))[np.ix_(free, free)],
        full[free], tol, max_iter,
    )
    return unvec(_embed(z), qhat, shat), iters

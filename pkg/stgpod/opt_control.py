"""One-shot reduced optimality system for state and costate.

The state lives in span{psi_hat_i nu_hat_l} with an initial-value time basis,
the costate in span{phi_hat_k mu_hat_m} with a terminal-value time basis.
Both first-order conditions are discretized all at once and solved together;
the reduced control is u = lambda / alpha.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
from scipy.optimize import fsolve

from stgpod.errors import InvalidArgumentError, InvalidConfigurationError, SolverFailure
from stgpod.fem_space import SpatialOperators, trilinear_form
from stgpod.full_order import ControlFunction, Trajectory, evaluate_cost, solve_state_forward
from stgpod.gen_pod import ReducedBases
from stgpod.st_galerkin import (
    ReducedOperators,
    newton_solve,
    project_operators,
    quadratic_jacobian,
    quadratic_term,
    unvec,
    vec,
)
from stgpod.time_basis import TimeBasis, triple_product
from stgpod.timing import best_of

logger = logging.getLogger(__name__)

NEWTON_TOL = 1e-9
NEWTON_MAX_ITER = 100


@dataclass(frozen=True)
class OptimalitySystem:
    state: ReducedOperators = field(repr=False)
    adjoint: ReducedOperators = field(repr=False)
    mixed_time: np.ndarray = field(repr=False)      # (psi_hat_i, phi_hat_k), shat x rhat
    mixed_space: np.ndarray = field(repr=False)     # (nu_hat_l, mu_hat_m), qhat x phat
    adjoint_time_tensor: np.ndarray = field(repr=False)   # [k, r, j] of phi_k phi_r psi_j
    adjoint_space_tensor: np.ndarray = field(repr=False)  # [m, p, a], linearized convection
    target_rhs: np.ndarray = field(repr=False)      # phat x rhat
    initial_block: np.ndarray = field(repr=False)   # first state column
    initial_guess: np.ndarray = field(repr=False)   # qhat x shat
    nu: float
    alpha: float
    nonlinear: bool = True

    @property
    def state_size(self) -> int:
        return self.state.size

    @property
    def size(self) -> int:
        """Unknowns before eliminating the initial and terminal blocks."""
        return self.state.size + self.adjoint.size

    @property
    def free_state(self) -> np.ndarray:
        return np.arange(self.state.qhat, self.state.size)

    @property
    def free_adjoint(self) -> np.ndarray:
        return self.state.size + np.arange(self.adjoint.qhat, self.adjoint.size)

    @property
    def free(self) -> np.ndarray:
        return np.concatenate([self.free_state, self.free_adjoint])

    def split(self, w: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        V = unvec(w[: self.state.size], self.state.qhat, self.state.shat)
        Lam = unvec(w[self.state.size:], self.adjoint.qhat, self.adjoint.shat)
        return V, Lam

    def constrained(self) -> np.ndarray:
        """Full unknown vector holding the eliminated blocks and zeros elsewhere."""
        V = self.initial_guess.copy()
        V[:, 0] = self.initial_block
        return np.concatenate([vec(V), np.zeros(self.adjoint.size)])


@dataclass
class SolveDiagnostics:
    iterations: int
    residual: float
    walltime: float
    method: str
    status: str = "ok"


# ---------------------------------------------------------------------------
# Assembly
# ---------------------------------------------------------------------------

def build_optimality_system(
    state_bases: ReducedBases,
    adjoint_bases: ReducedBases,
    ops: SpatialOperators,
    tb: TimeBasis,
    nu: float,
    alpha: float,
    x0: np.ndarray,
    xstar: np.ndarray,
    initial_state: Optional[np.ndarray] = None,
    nonlinear: bool = True,
) -> OptimalitySystem:
    """Assemble the coupled system.

    ``xstar`` is a FEM vector (constant target) or a q x s tensor coefficient
    matrix. ``initial_state`` (q x s) seeds the Newton guess for the state.
    """
    if state_bases.time.mode != "initial-value":
        raise InvalidConfigurationError("state time basis must be built in initial-value mode")
    if adjoint_bases.time.mode != "terminal-value":
        raise InvalidConfigurationError("adjoint time basis must be built in terminal-value mode")
    if alpha <= 0:
        raise InvalidArgumentError(f"alpha must be positive, got {alpha}")

    state = project_operators(state_bases, ops, tb)
    adjoint = project_operators(adjoint_bases, ops, tb)
    Bv, Cv = state.space_coeffs, state.time_coeffs
    Bl, Cl = adjoint.space_coeffs, adjoint.time_coeffs

    mixed_time = Cv.T @ (tb.mass @ Cl)
    mixed_space = Bv.T @ (ops.mass @ Bl)
    adjoint_time_tensor = triple_product(tb, Cl, Cl, Cv)
    adjoint_space_tensor = (
        trilinear_form(ops.space, Bl, Bl, Bv)
        + trilinear_form(ops.space, Bl, Bv, Bl).transpose(2, 0, 1)
    )

    xstar = np.asarray(xstar, dtype=float)
    if xstar.ndim == 1:
        xstar = np.outer(xstar, np.ones(tb.s))
    if xstar.shape != (ops.q, tb.s):
        raise InvalidArgumentError(f"target of shape {xstar.shape} does not fit {(ops.q, tb.s)}")
    vstar = state.project_space_time(xstar)
    target_rhs = mixed_space.T @ vstar @ mixed_time

    start = state.time_values(0.0)
    initial_block = state.project_space(np.asarray(x0, dtype=float)) / start[0]
    guess = (
        np.zeros((state.qhat, state.shat))
        if initial_state is None
        else state.project_space_time(initial_state)
    )
    system = OptimalitySystem(
        state=state, adjoint=adjoint,
        mixed_time=mixed_time, mixed_space=mixed_space,
        adjoint_time_tensor=adjoint_time_tensor,
        adjoint_space_tensor=adjoint_space_tensor,
        target_rhs=target_rhs, initial_block=initial_block, initial_guess=guess,
        nu=nu, alpha=alpha, nonlinear=nonlinear,
    )
    logger.debug(
        "optimality system: state %dx%d, adjoint %dx%d, %d unknowns",
        state.qhat, state.shat, adjoint.qhat, adjoint.shat, system.size,
    )
    return system


def optimality_residual(sys: OptimalitySystem, w: np.ndarray) -> np.ndarray:
    V, Lam = sys.split(w)
    st, ad = sys.state, sys.adjoint
    nu = sys.nu
    r_state = (
        st.mass_space @ V @ st.dmass_time.T
        + nu * st.stiff_space @ V @ st.mass_time.T
        - (sys.mixed_space @ Lam @ sys.mixed_time.T) / sys.alpha
        - st.load
    )
    r_adj = (
        -ad.mass_space @ Lam @ ad.dmass_time.T
        + nu * ad.stiff_space @ Lam @ ad.mass_time.T
        + sys.mixed_space.T @ V @ sys.mixed_time
        - sys.target_rhs
    )
    if sys.nonlinear:
        r_state = r_state + quadratic_term(st.time_tensor, st.space_tensor, V)
        r_adj = r_adj + np.einsum(
            "aj,pr,krj,mpa->mk", V, Lam,
            sys.adjoint_time_tensor, sys.adjoint_space_tensor, optimize=True,
        )
    return np.concatenate([vec(r_state), vec(r_adj)])


def optimality_jacobian(sys: OptimalitySystem, w: np.ndarray) -> np.ndarray:
    V, Lam = sys.split(w)
    st, ad = sys.state, sys.adjoint
    nu = sys.nu
    coupling = np.kron(sys.mixed_time, sys.mixed_space)
    vv = np.kron(st.dmass_time, st.mass_space) + nu * np.kron(st.mass_time, st.stiff_space)
    ll = -np.kron(ad.dmass_time, ad.mass_space) + nu * np.kron(ad.mass_time, ad.stiff_space)
    lv = coupling.T.copy()
    if sys.nonlinear:
        vv = vv + quadratic_jacobian(st.time_tensor, st.space_tensor, V)
        Tm, Sm = sys.adjoint_time_tensor, sys.adjoint_space_tensor
        ll = ll + np.einsum("aj,krj,mpa->kmrp", V, Tm, Sm, optimize=True).reshape(ad.size, ad.size)
        lv = lv + np.einsum("pr,krj,mpa->kmja", Lam, Tm, Sm, optimize=True).reshape(ad.size, st.size)
    return np.block([[vv, -coupling / sys.alpha], [lv, ll]])


# ---------------------------------------------------------------------------
# Solve
# ---------------------------------------------------------------------------

def _solve_once(sys: OptimalitySystem, method: str, tol: float, max_iter: int):
    free = sys.free
    base = sys.constrained()

    def _embed(z):
        w = base.copy()
        w[free] = z
        return w

    def fun(z):
        return optimality_residual(sys, _embed(z))[free]

    def jac(z):
        return optimality_jacobian(sys, _embed(z))[np.ix_(free, free)]

    z0 = base[free]
    if method == "newton":
        z, iters, resnorm = newton_solve(fun, jac, z0, tol, max_iter)
    elif method == "fsolve":
        z, info, ier, msg = fsolve(fun, z0, fprime=jac, xtol=1e-13, full_output=True)
        resnorm = float(np.abs(fun(z)).max()) if z.size else 0.0
        iters = int(info["nfev"])
        if resnorm >= tol:
            raise SolverFailure(f"fsolve stopped: {msg.strip()}", iterations=iters, residual=resnorm)
    else:
        raise InvalidArgumentError(f"unknown solver method {method!r}")
    return _embed(z), iters, resnorm


def solve_optimality(
    sys: OptimalitySystem,
    method: str = "newton",
    tol: float = NEWTON_TOL,
    max_iter: int = NEWTON_MAX_ITER,
    reps: int = 1,
) -> Tuple[np.ndarray, np.ndarray, SolveDiagnostics]:
    """Return coefficient matrices (V, Lambda) and diagnostics.

    The walltime is the best of ``reps`` identical solves.
    """
    (w, iters, resnorm), walltime = best_of(lambda: _solve_once(sys, method, tol, max_iter), reps)
    V, Lam = sys.split(w)
    logger.info(
        "optimality system solved by %s: %d iterations, residual %.2e, %.4fs",
        method, iters, resnorm, walltime,
    )
    return V, Lam, SolveDiagnostics(iterations=iters, residual=resnorm, walltime=walltime, method=method)


# ---------------------------------------------------------------------------
# Closed loop
# ---------------------------------------------------------------------------

def lift_control(sys: OptimalitySystem, lam: np.ndarray, times: np.ndarray) -> ControlFunction:
    """u = lambda / alpha on the full FEM space, sampled at ``times``."""
    times = np.asarray(times, dtype=float)
    values = sys.adjoint.lift(np.asarray(lam, dtype=float), times) / sys.alpha
    return ControlFunction(times=times, values=values)


@dataclass
class ClosedLoopResult:
    tracking: float
    J: float
    walltime: float
    state: Trajectory = field(repr=False)


def closed_loop_evaluate(
    ops: SpatialOperators,
    nu: float,
    x0: np.ndarray,
    u: ControlFunction,
    xstar: np.ndarray,
    alpha: float,
    n_t: int,
    horizon: float,
    solve_walltime: float = 0.0,
) -> ClosedLoopResult:
    """Apply ``u`` to the full model; ``solve_walltime`` is echoed into the result."""
    state = solve_state_forward(ops, nu, x0, u, n_t, horizon)
    tracking, J = evaluate_cost(ops, state, xstar, u, alpha)
    return ClosedLoopResult(tracking=tracking, J=J, walltime=solve_walltime, state=state)

"""Optimal reduced space and time bases from weighted measurements.

Space modes are the leading left singular vectors of L_Y^T X L_S, time modes
the leading right ones. Mapped back through the Cholesky factors they give
L2-orthonormal functions nu_hat = V^T L_Y^{-1} nu and psi_hat = U^T L_S^{-1} psi.

For the state the first time mode is reserved for the initial value: the
remaining modes are computed from the measurement restricted to functions
vanishing at t=0, and psi_1 orthogonalized against them is prepended. The
adjoint gets the mirrored construction at t=T.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np
import scipy.linalg as spla

from stgpod.errors import InvalidArgumentError, InvalidConfigurationError
from stgpod.fem_space import SpatialOperators
from stgpod.gen_measurements import CombinedMeasurements
from stgpod.time_basis import TimeBasis, evaluate_basis, subspace_factor

logger = logging.getLogger(__name__)

TIME_MODES = ("plain", "initial-value", "terminal-value")
_EXCLUDED_END = {"plain": None, "initial-value": "first", "terminal-value": "last"}


# ---------------------------------------------------------------------------
# Types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SpaceModes:
    V: np.ndarray = field(repr=False)
    sigma: np.ndarray = field(repr=False)
    ops: SpatialOperators = field(repr=False)

    @property
    def dim(self) -> int:
        return self.V.shape[1]

    def coefficients(self) -> np.ndarray:
        """FEM coefficients of nu_hat_1..nu_hat_qhat as columns, L_Y^{-T} V."""
        return self.ops.chol_solve_transposed(self.V)


@dataclass(frozen=True)
class TimeModes:
    U: np.ndarray = field(repr=False)
    sigma: np.ndarray = field(repr=False)
    tb: TimeBasis = field(repr=False)
    mode: str = "plain"

    @property
    def dim(self) -> int:
        return self.U.shape[1]

    def coefficients(self) -> np.ndarray:
        """Hat coefficients of psi_hat_1..psi_hat_shat as columns, L_S^{-T} U."""
        return self.tb.chol_solve_transposed(self.U)

    def evaluate(self, t) -> np.ndarray:
        return evaluate_basis(self.tb, t) @ self.coefficients()


@dataclass(frozen=True)
class ReducedBases:
    space: SpaceModes
    time: TimeModes

    @property
    def dims(self):
        return self.space.dim, self.time.dim


# ---------------------------------------------------------------------------
# Bases
# ---------------------------------------------------------------------------

def _leading_left_vectors(matrix: np.ndarray, count: int, what: str):
    try:
        left, sigma, _ = spla.svd(matrix, full_matrices=False)
    except np.linalg.LinAlgError as err:
        raise InvalidArgumentError(f"SVD for the {what} basis failed: {err}") from err
    if count > left.shape[1]:
        raise InvalidArgumentError(
            f"{what} basis asks for {count} modes, data provide {left.shape[1]}"
        )
    return left[:, :count], sigma


def optimal_space_basis(
    weighted: np.ndarray, qhat: int, ops: SpatialOperators
) -> SpaceModes:
    q = weighted.shape[0]
    if not 1 <= qhat <= q:
        raise InvalidArgumentError(f"qhat={qhat} outside 1..{q}")
    V, sigma = _leading_left_vectors(weighted, qhat, "space")
    logger.debug("space basis: %d modes, tail %.3e", qhat, np.sqrt(np.sum(sigma[qhat:] ** 2)))
    return SpaceModes(V=V, sigma=sigma, ops=ops)


def optimal_time_basis(
    measurements: CombinedMeasurements, shat: int, mode: str = "plain"
) -> TimeModes:
    if mode not in TIME_MODES:
        raise InvalidConfigurationError(f"unknown time basis mode {mode!r}")
    tb = measurements.tb
    if not 1 <= shat <= tb.s:
        raise InvalidArgumentError(f"shat={shat} outside 1..{tb.s}")

    exclude = _EXCLUDED_END[mode]
    if exclude is None:
        U, sigma = _leading_left_vectors(measurements.time_stack(), shat, "time")
        return TimeModes(U=U, sigma=sigma, tb=tb, mode=mode)

    keep, sub_chol = subspace_factor(tb, exclude)
    reduced, sigma = _leading_left_vectors(
        measurements.time_stack(exclude), shat - 1, "time"
    )
    # embed: hat coefficients with a zero at the excluded node, then back to U-coordinates
    coeffs = np.zeros((tb.s, shat - 1))
    coeffs[keep] = spla.solve_triangular(sub_chol, reduced, lower=True, trans="T")
    rest = tb.chol.T @ coeffs

    end = 0 if exclude == "first" else tb.s - 1
    boundary = tb.chol.T[:, end].copy()
    boundary -= rest @ (rest.T @ boundary)
    norm = np.linalg.norm(boundary)
    if norm < 1e-12:
        raise InvalidArgumentError("boundary mode lies in the span of the data modes")
    U = np.column_stack([boundary / norm, rest])
    return TimeModes(U=U, sigma=sigma, tb=tb, mode=mode)


def build_reduced_bases(
    measurements: CombinedMeasurements, qhat: int, shat: int, mode: str
) -> ReducedBases:
    space = optimal_space_basis(measurements.space_stack, qhat, measurements.ops)
    time = optimal_time_basis(measurements, shat, mode)
    return ReducedBases(space=space, time=time)


def projection_error(
    weighted: np.ndarray, V: Optional[np.ndarray], U: Optional[np.ndarray]
) -> float:
    """||W - V V^T W U U^T||_F; ``None`` stands for the identity on that side."""
    projected = weighted if V is None else V @ (V.T @ weighted)
    if U is not None:
        projected = (projected @ U) @ U.T
    return float(np.linalg.norm(weighted - projected, "fro"))


def write_singular_values(path: Union[str, Path], sigma: np.ndarray) -> None:
    k = np.arange(1, sigma.size + 1)
    np.savetxt(
        path, np.column_stack([k, sigma]), delimiter=",",
        header="k,sigma", comments="", fmt=["%d", "%.12g"],
    )

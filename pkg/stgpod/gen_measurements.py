"""Generalized measurements of trajectories in the space-time tensor space.

A trajectory is represented by the coefficient matrix X of its L2 projection
onto span{psi_j nu_i}. Weighting X with the Cholesky factors of both mass
matrices turns the space-time L2 norm into a Frobenius norm, which is what
the POD step works with.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Tuple, Union

import numpy as np
import scipy.linalg as spla

from stgpod.errors import InvalidArgumentError
from stgpod.fem_space import SpatialOperators
from stgpod.full_order import Trajectory
from stgpod.time_basis import TimeBasis, load_matrix, subspace_factor

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MeasurementMatrix:
    """Coefficients ``X`` (q x s) together with the spaces that weight them.

    ``gram`` holds G = X M_S, the integrals of the trajectory against each
    time hat.
    """

    X: np.ndarray = field(repr=False)
    gram: np.ndarray = field(repr=False)
    ops: SpatialOperators = field(repr=False)
    tb: TimeBasis = field(repr=False)
    label: str = ""

    @property
    def shape(self) -> Tuple[int, int]:
        return self.X.shape

    def weighted(self) -> np.ndarray:
        """L_Y^T X L_S."""
        return self.ops.chol.T @ self.X @ self.tb.chol

    def restricted_weighted(self, exclude: Optional[str]) -> np.ndarray:
        """Weighted measurement in the time space without psi_1 or psi_s."""
        if exclude is None:
            return self.weighted()
        keep, sub_chol = subspace_factor(self.tb, exclude)
        right = spla.solve_triangular(sub_chol, self.gram[:, keep].T, lower=True)
        return self.ops.chol.T @ right.T

    def to_csv(self, path: Union[str, Path]) -> None:
        np.savetxt(path, self.X, delimiter=",", fmt="%.12g")


@dataclass(frozen=True)
class CombinedMeasurements:
    """Column stacking of several measurements, part ``k`` scaled by ``scales[k]``."""

    parts: Tuple[MeasurementMatrix, ...]
    scales: Tuple[float, ...] = ()

    def __post_init__(self):
        if not self.scales:
            object.__setattr__(self, "scales", (1.0,) * len(self.parts))
        if len(self.scales) != len(self.parts):
            raise InvalidArgumentError(f"{len(self.scales)} scales for {len(self.parts)} measurements")

    @property
    def space_stack(self) -> np.ndarray:
        """q x (sum of s_k) matrix for spatial modes."""
        return np.hstack([scale * part.weighted() for part, scale in zip(self.parts, self.scales)])

    def time_stack(self, exclude: Optional[str] = None) -> np.ndarray:
        """s x (sum of q_k) matrix for temporal modes (rows drop one end if asked)."""
        return np.hstack([
            scale * part.restricted_weighted(exclude).T for part, scale in zip(self.parts, self.scales)
        ])

    @property
    def tb(self) -> TimeBasis:
        return self.parts[0].tb

    @property
    def ops(self) -> SpatialOperators:
        return self.parts[0].ops


def measure_trajectory(
    traj: Trajectory, tb: TimeBasis, ops: SpatialOperators
) -> MeasurementMatrix:
    """X = G M_S^{-1} with G the exact time integrals of the piecewise-linear trajectory."""
    if traj.values.size == 0:
        raise InvalidArgumentError("cannot measure an empty trajectory")
    if traj.values.shape[1] != ops.q:
        raise InvalidArgumentError(
            f"trajectory has {traj.values.shape[1]} coefficients, expected {ops.q}"
        )
    gram = traj.values.T @ load_matrix(tb, traj.times)
    X = tb.solve_mass(gram.T).T
    logger.debug("measured %s trajectory into a %dx%d matrix", traj.kind, *X.shape)
    return MeasurementMatrix(X=X, gram=gram, ops=ops, tb=tb, label=traj.kind)


def measurement_from_coefficients(
    X: np.ndarray, tb: TimeBasis, ops: SpatialOperators, label: str = ""
) -> MeasurementMatrix:
    """Wrap a coefficient matrix of a member of the tensor space."""
    X = np.asarray(X, dtype=float)
    if X.shape != (ops.q, tb.s):
        raise InvalidArgumentError(f"X has shape {X.shape}, expected {(ops.q, tb.s)}")
    return MeasurementMatrix(X=X, gram=(tb.mass @ X.T).T, ops=ops, tb=tb, label=label)


def weighted_norm(meas: MeasurementMatrix) -> float:
    return float(np.linalg.norm(meas.weighted(), "fro"))


def combine_measurements(
    parts: Sequence[MeasurementMatrix], normalize: bool = False
) -> CombinedMeasurements:
    """Stack ``parts``; with ``normalize`` each enters with unit weighted norm."""
    parts = tuple(parts)
    if not parts:
        raise InvalidArgumentError("nothing to combine")
    shape = parts[0].shape
    for part in parts[1:]:
        if part.shape != shape:
            raise InvalidArgumentError(
                f"cannot combine measurements of shapes {shape} and {part.shape}"
            )
    if not normalize:
        return CombinedMeasurements(parts=parts)
    scales = []
    for part in parts:
        norm = weighted_norm(part)
        if norm == 0.0:
            logger.warning("%s measurement is zero, stacking it unscaled", part.label or "a")
            norm = 1.0
        scales.append(1.0 / norm)
    return CombinedMeasurements(parts=parts, scales=tuple(scales))

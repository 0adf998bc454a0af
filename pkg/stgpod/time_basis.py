"""Piecewise-linear hat basis in time on [0, T], boundary nodes included."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as spla
import scipy.sparse as sps

from stgpod.errors import InvalidArgumentError, OutOfDomainError

# integral of phi_a phi_b phi_c over an element, divided by its width
_ELEMENT_CUBIC = np.full((2, 2, 2), 1.0 / 12.0)
_ELEMENT_CUBIC[0, 0, 0] = _ELEMENT_CUBIC[1, 1, 1] = 0.25


@dataclass(frozen=True)
class TimeBasis:
    """Hat functions psi_1..psi_s with psi_1 the node at t=0.

    ``dmass[i, j]`` is the integral of psi_i times the derivative of psi_j.
    """

    horizon: float
    s: int
    nodes: np.ndarray = field(repr=False)
    delta: float
    mass: sps.csr_matrix = field(repr=False)
    dmass: sps.csr_matrix = field(repr=False)
    chol: np.ndarray = field(repr=False)

    def solve_mass(self, rhs: np.ndarray) -> np.ndarray:
        return spla.cho_solve((self.chol, True), rhs)

    def chol_solve_transposed(self, rhs: np.ndarray) -> np.ndarray:
        """L_S^{-T} rhs by a triangular solve."""
        return spla.solve_triangular(self.chol, rhs, lower=True, trans="T")


def build_time_basis(horizon: float, s: int) -> TimeBasis:
    if horizon <= 0:
        raise InvalidArgumentError(f"horizon must be positive, got {horizon}")
    if s < 2:
        raise InvalidArgumentError(f"time basis needs s >= 2 nodes, got s={s}")
    delta = horizon / (s - 1)
    nodes = np.linspace(0.0, horizon, s)

    diag = np.full(s, 4.0)
    diag[[0, -1]] = 2.0
    off = np.ones(s - 1)
    mass = sps.diags([off, diag, off], [-1, 0, 1], format="csr") * (delta / 6.0)

    ddiag = np.zeros(s)
    ddiag[0], ddiag[-1] = -0.5, 0.5
    dmass = sps.diags([-0.5 * off, ddiag, 0.5 * off], [-1, 0, 1], format="csr")

    chol = spla.cholesky(mass.toarray(), lower=True)
    return TimeBasis(
        horizon=float(horizon), s=int(s), nodes=nodes, delta=delta,
        mass=mass, dmass=dmass, chol=chol,
    )


def hat_matrix(nodes: np.ndarray, t) -> np.ndarray:
    """Values of the hat functions on ``nodes`` at ``t``, shape (len(t), len(nodes))."""
    nodes = np.asarray(nodes, dtype=float)
    t = np.atleast_1d(np.asarray(t, dtype=float))
    span = nodes[-1] - nodes[0]
    slack = 1e-12 * max(span, 1.0)
    if np.any(t < nodes[0] - slack) or np.any(t > nodes[-1] + slack):
        raise OutOfDomainError(
            f"time outside [{nodes[0]:g}, {nodes[-1]:g}]: "
            f"min={t.min():g}, max={t.max():g}"
        )
    t = np.clip(t, nodes[0], nodes[-1])
    k = np.clip(np.searchsorted(nodes, t, side="right") - 1, 0, len(nodes) - 2)
    w = (t - nodes[k]) / (nodes[k + 1] - nodes[k])
    values = np.zeros((t.size, nodes.size))
    rows = np.arange(t.size)
    values[rows, k] = 1.0 - w
    values[rows, k + 1] += w
    return values


def evaluate_basis(basis: TimeBasis, t) -> np.ndarray:
    """(psi_1(t), ..., psi_s(t)); a matrix with one row per entry for array ``t``."""
    values = hat_matrix(basis.nodes, t)
    return values[0] if np.ndim(t) == 0 else values


def _element_ends(a: np.ndarray):
    return a[:-1], a[1:]


def triple_product(
    basis: TimeBasis, P: np.ndarray, Q: np.ndarray, R: np.ndarray
) -> np.ndarray:
    """Tensor T[m, n, k] = integral over [0, T] of f_m g_n w_k.

    f = P^T psi, g = Q^T psi, w = R^T psi; exact per-element cubic integrals.
    """
    P, Q, R = (np.atleast_2d(np.asarray(a, dtype=float)) for a in (P, Q, R))
    for name, mat in (("P", P), ("Q", Q), ("R", R)):
        if mat.shape[0] != basis.s:
            raise InvalidArgumentError(
                f"{name} has {mat.shape[0]} rows, expected {basis.s}"
            )
    widths = np.diff(basis.nodes)
    result = np.zeros((P.shape[1], Q.shape[1], R.shape[1]))
    for a, Pa in enumerate(_element_ends(P)):
        for b, Qb in enumerate(_element_ends(Q)):
            for c, Rc in enumerate(_element_ends(R)):
                result += _ELEMENT_CUBIC[a, b, c] * np.einsum(
                    "e,em,en,ek->mnk", widths, Pa, Qb, Rc, optimize=True
                )
    return result


def load_matrix(basis: TimeBasis, times: np.ndarray) -> np.ndarray:
    """Integrals of the interpolation hats on ``times`` against psi_1..psi_s.

    Entry (k, j) is the integral of ell_k psi_j, where ell_k is the hat of
    the grid ``times``. Both factors are linear between the merged
    breakpoints, so Simpson's rule on the merged grid is exact.
    """
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size < 2:
        raise InvalidArgumentError("a time grid needs at least two instants")
    if np.any(np.diff(times) <= 0):
        raise InvalidArgumentError("time grid must be strictly increasing")
    slack = 1e-10 * basis.horizon
    if abs(times[0]) > slack or abs(times[-1] - basis.horizon) > slack:
        raise InvalidArgumentError(
            f"time grid [{times[0]:g}, {times[-1]:g}] does not cover "
            f"[0, {basis.horizon:g}]"
        )
    merged = np.unique(np.concatenate([times, basis.nodes]))
    merged = merged[np.concatenate([[True], np.diff(merged) > slack])]
    mids = 0.5 * (merged[:-1] + merged[1:])
    weights = np.diff(merged)[:, None] / 6.0

    grid_at_nodes = hat_matrix(times, merged)
    grid_at_mids = hat_matrix(times, mids)
    basis_at_nodes = hat_matrix(basis.nodes, merged)
    basis_at_mids = hat_matrix(basis.nodes, mids)
    return (
        grid_at_nodes[:-1].T @ (weights * basis_at_nodes[:-1])
        + 4.0 * grid_at_mids.T @ (weights * basis_at_mids)
        + grid_at_nodes[1:].T @ (weights * basis_at_nodes[1:])
    )


def subspace_factor(basis: TimeBasis, exclude: Optional[str] = None):
    """Kept node indices and Cholesky factor of the mass matrix without one end.

    ``exclude="first"`` drops psi_1 (functions vanishing at t=0),
    ``exclude="last"`` drops psi_s (functions vanishing at t=T).
    """
    if exclude is None:
        return np.arange(basis.s), basis.chol
    if exclude == "first":
        keep = np.arange(1, basis.s)
    elif exclude == "last":
        keep = np.arange(basis.s - 1)
    else:
        raise InvalidArgumentError(f"exclude must be 'first' or 'last', got {exclude!r}")
    sub_mass = basis.mass.toarray()[np.ix_(keep, keep)]
    return keep, spla.cholesky(sub_mass, lower=True)

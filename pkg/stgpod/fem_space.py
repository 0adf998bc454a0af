"""P1 finite elements on (0, L) with homogeneous Dirichlet conditions.

The spatial space is spanned by the interior hat functions nu_1..nu_q on an
equidistant grid. Everything downstream (full-order solves, measurements,
reduced bases) gets its mass, stiffness and convection operators from here.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg as spla
import scipy.sparse as sps
from numpy.polynomial.legendre import leggauss

from stgpod.errors import InvalidArgumentError, OutOfDomainError

logger = logging.getLogger(__name__)

# integral of phi_a * phi_b over a reference element, divided by its width
_ELEMENT_MASS = np.array([[1.0 / 3.0, 1.0 / 6.0], [1.0 / 6.0, 1.0 / 3.0]])

_GAUSS_POINTS, _GAUSS_WEIGHTS = leggauss(3)


# ---------------------------------------------------------------------------
# Types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FemSpace:
    length: float
    q: int
    nodes: np.ndarray = field(repr=False)
    h: float

    @property
    def n_elements(self) -> int:
        return self.q + 1

    def pad(self, coeffs: np.ndarray) -> np.ndarray:
        """Append the zero boundary values along the first axis."""
        coeffs = np.asarray(coeffs, dtype=float)
        zero = np.zeros((1,) + coeffs.shape[1:])
        return np.concatenate([zero, coeffs, zero], axis=0)

    def _locate(self, xi):
        xi = np.atleast_1d(np.asarray(xi, dtype=float))
        if np.any(xi < 0.0) or np.any(xi > self.length):
            raise OutOfDomainError(f"points outside [0, {self.length:g}]")
        k = np.clip(np.floor(xi / self.h).astype(int), 0, self.q)
        return xi, k, np.arange(xi.size)

    def basis_values(self, xi) -> np.ndarray:
        """nu_1..nu_q at ``xi``, one row per point."""
        xi, k, rows = self._locate(xi)
        w = xi / self.h - k
        values = np.zeros((xi.size, self.q + 2))
        values[rows, k] = 1.0 - w
        values[rows, k + 1] += w
        return values[:, 1:-1]

    def basis_gradients(self, xi) -> np.ndarray:
        """Derivatives of nu_1..nu_q at ``xi`` (right-sided at the nodes)."""
        xi, k, rows = self._locate(xi)
        grads = np.zeros((xi.size, self.q + 2))
        grads[rows, k] = -1.0 / self.h
        grads[rows, k + 1] = 1.0 / self.h
        return grads[:, 1:-1]

    def evaluate(self, coeffs: np.ndarray, xi) -> np.ndarray:
        """Point values of sum_i coeffs[i] nu_i at ``xi``."""
        return self.basis_values(xi) @ np.asarray(coeffs, dtype=float)


@dataclass(frozen=True)
class SpatialOperators:
    """Mass, stiffness and convection operators of a :class:`FemSpace`.

    ``mass`` and ``stiffness`` are sparse tridiagonal (CSR); ``chol`` is the
    dense lower Cholesky factor L_Y of the mass matrix. The convection tensor
    is kept in its stencil form: ``convection(x)[i] = x^T A_i x`` with A_i
    available through :meth:`convection_matrix`.
    """

    space: FemSpace
    mass: sps.csr_matrix = field(repr=False)
    stiffness: sps.csr_matrix = field(repr=False)
    chol: np.ndarray = field(repr=False)

    @property
    def q(self) -> int:
        return self.space.q

    # -- convection ---------------------------------------------------------

    def convection(self, x: np.ndarray) -> np.ndarray:
        """H_Y(x)_i = integral of nu_i v dv/dxi, columnwise for 2-D ``x``."""
        xp = self.space.pad(x)
        left, mid, right = xp[:-2], xp[1:-1], xp[2:]
        return (right**2 - left**2 + mid * (right - left)) / 6.0

    def convection_jacobian(self, x: np.ndarray) -> sps.csr_matrix:
        """Derivative of :meth:`convection`; row i equals 2 x^T A_i."""
        x = np.asarray(x, dtype=float)
        xp = self.space.pad(x)
        left, right = xp[:-2], xp[2:]
        diag = (right - left) / 6.0
        lower = -x[:-1] / 3.0 - x[1:] / 6.0
        upper = x[1:] / 3.0 + x[:-1] / 6.0
        return sps.diags([lower, diag, upper], [-1, 0, 1], format="csr")

    def convection_matrix(self, i: int) -> sps.csr_matrix:
        """The symmetric matrix A_i with x^T A_i x = convection(x)[i]."""
        q = self.q
        if not 0 <= i < q:
            raise InvalidArgumentError(f"node index {i} outside 0..{q - 1}")
        rows, cols, vals = [], [], []
        if i + 1 < q:
            rows += [i + 1, i, i + 1]
            cols += [i + 1, i + 1, i]
            vals += [1.0 / 6.0, 1.0 / 12.0, 1.0 / 12.0]
        if i - 1 >= 0:
            rows += [i - 1, i, i - 1]
            cols += [i - 1, i - 1, i]
            vals += [-1.0 / 6.0, -1.0 / 12.0, -1.0 / 12.0]
        return sps.csr_matrix((vals, (rows, cols)), shape=(q, q))

    # -- mass solves ----------------------------------------------------------

    def solve_mass(self, rhs: np.ndarray) -> np.ndarray:
        return spla.cho_solve((self.chol, True), rhs)

    def chol_solve_transposed(self, rhs: np.ndarray) -> np.ndarray:
        """L_Y^{-T} rhs by a triangular solve."""
        return spla.solve_triangular(self.chol, rhs, lower=True, trans="T")


# ---------------------------------------------------------------------------
# Construction
# ---------------------------------------------------------------------------

def build_fem_space(length: float, q: int) -> FemSpace:
    if length <= 0:
        raise InvalidArgumentError(f"length must be positive, got {length}")
    if q < 1:
        raise InvalidArgumentError(f"need at least one interior node, got q={q}")
    h = length / (q + 1)
    nodes = h * np.arange(1, q + 1)
    return FemSpace(length=float(length), q=int(q), nodes=nodes, h=h)


def assemble_spatial_operators(space: FemSpace) -> SpatialOperators:
    q, h = space.q, space.h
    ones = np.ones(q)
    mass = sps.diags(
        [ones[:-1], 4.0 * ones, ones[:-1]], [-1, 0, 1], format="csr"
    ) * (h / 6.0)
    stiffness = sps.diags(
        [-ones[:-1], 2.0 * ones, -ones[:-1]], [-1, 0, 1], format="csr"
    ) / h
    try:
        chol = spla.cholesky(mass.toarray(), lower=True)
    except np.linalg.LinAlgError as err:
        raise InvalidArgumentError(f"mass matrix not positive definite: {err}") from err
    logger.debug("assembled P1 operators with q=%d, h=%.4g", q, h)
    return SpatialOperators(space=space, mass=mass, stiffness=stiffness, chol=chol)


# ---------------------------------------------------------------------------
# Functions on the space
# ---------------------------------------------------------------------------

def step_initial_value(xi, jump: float = 0.5) -> np.ndarray:
    """1 left of (and at) ``jump``, 0 to the right."""
    return np.where(np.asarray(xi) <= jump, 1.0, 0.0)


def _call_vectorized(f: Callable, xi: np.ndarray) -> np.ndarray:
    try:
        values = np.asarray(f(xi), dtype=float)
    except (TypeError, ValueError):
        values = None
    if values is None or values.shape != xi.shape:
        values = np.vectorize(f, otypes=[float])(xi)
    return values


def interpolate_function(space: FemSpace, f: Callable) -> np.ndarray:
    """Nodal interpolant of ``f`` at the interior nodes."""
    return _call_vectorized(f, space.nodes)


def project_function(ops: SpatialOperators, f: Callable) -> np.ndarray:
    """L2-orthogonal projection coefficients M_Y^{-1} [(f, nu_i)]_i.

    The load integrals use three-point Gauss quadrature on every element.
    """
    space = ops.space
    h = space.h
    left_nodes = h * np.arange(space.n_elements)
    ref = 0.5 * (1.0 + _GAUSS_POINTS)
    points = left_nodes[:, None] + h * ref[None, :]
    values = _call_vectorized(f, points.ravel()).reshape(points.shape)
    weighted = values * (0.5 * h * _GAUSS_WEIGHTS)[None, :]
    load = np.zeros(space.q + 2)
    load[:-1] += weighted @ (1.0 - ref)
    load[1:] += weighted @ ref
    return ops.solve_mass(load[1:-1])


def trilinear_form(
    space: FemSpace, P: np.ndarray, Q: np.ndarray, R: np.ndarray
) -> np.ndarray:
    """Tensor T[m, n, k] = integral of f_m g_n d/dxi w_k over (0, L).

    The functions are f = P^T nu, g = Q^T nu and w = R^T nu for coefficient
    matrices with q rows. Integration is exact element by element.
    """
    P, Q, R = (np.atleast_2d(np.asarray(a, dtype=float)) for a in (P, Q, R))
    for name, mat in (("P", P), ("Q", Q), ("R", R)):
        if mat.shape[0] != space.q:
            raise InvalidArgumentError(
                f"{name} has {mat.shape[0]} rows, expected {space.q}"
            )
    Pp, Qp, Rp = space.pad(P), space.pad(Q), space.pad(R)
    slope = Rp[1:] - Rp[:-1]
    ends = ((Pp[:-1], Qp[:-1]), (Pp[1:], Qp[1:]))
    result = np.zeros((P.shape[1], Q.shape[1], R.shape[1]))
    for a, (Pa, _) in enumerate(ends):
        for b, (_, Qb) in enumerate(ends):
            result += _ELEMENT_MASS[a, b] * np.einsum(
                "em,en,ek->mnk", Pa, Qb, slope, optimize=True
            )
    return result

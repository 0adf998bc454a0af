"""
Tests for the P1 finite element space.

Covers:
  - stgpod/fem_space.py: build_fem_space, assemble_spatial_operators,
    convection / convection_jacobian / convection_matrix, project_function,
    interpolate_function, trilinear_form

Run with:  python3 tests/test_fem_space.py
"""

import sys
import unittest
from pathlib import Path

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from numpy.polynomial.legendre import leggauss

REPO_ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(REPO_ROOT))

from stgpod.errors import InvalidArgumentError, OutOfDomainError  # noqa: E402
from stgpod.fem_space import (  # noqa: E402
    assemble_spatial_operators,
    build_fem_space,
    interpolate_function,
    project_function,
    step_initial_value,
    trilinear_form,
)


def gauss_points(space, n=3):
    """Gauss points and weights on every element, strictly inside the elements."""
    g, w = leggauss(n)
    left = space.h * np.arange(space.n_elements)
    points = (left[:, None] + 0.5 * space.h * (1.0 + g)[None, :]).reshape(-1)
    weights = np.tile(0.5 * space.h * w, space.n_elements)
    return points, weights


finite = st.floats(min_value=-3.0, max_value=3.0, allow_nan=False, allow_infinity=False)


# ===========================================================================
# Construction
# ===========================================================================

class TestBuildSpace(unittest.TestCase):
    """Grid layout and argument checks."""

    def test_nodes_and_width(self):
        space = build_fem_space(1.0, 3)
        self.assertAlmostEqual(space.h, 0.25)
        np.testing.assert_allclose(space.nodes, [0.25, 0.5, 0.75])
        self.assertEqual(space.n_elements, 4)

    def test_full_scale_width(self):
        space = build_fem_space(1.0, 220)
        self.assertAlmostEqual(space.h, 1.0 / 221.0)

    def test_rejects_bad_arguments(self):
        with self.assertRaises(InvalidArgumentError):
            build_fem_space(1.0, 0)
        with self.assertRaises(InvalidArgumentError):
            build_fem_space(0.0, 5)

    def test_evaluate_reproduces_nodal_values(self):
        space = build_fem_space(2.0, 4)
        coeffs = np.array([1.0, -2.0, 0.5, 3.0])
        np.testing.assert_allclose(space.evaluate(coeffs, space.nodes), coeffs)
        np.testing.assert_allclose(space.evaluate(coeffs, [0.0, 2.0]), [0.0, 0.0])
        with self.assertRaises(OutOfDomainError):
            space.evaluate(coeffs, 2.5)


class TestAssembly(unittest.TestCase):
    """Mass and stiffness matrices."""

    def setUp(self):
        self.ops = assemble_spatial_operators(build_fem_space(1.0, 3))

    def test_mass_entries(self):
        expected = np.array([
            [1 / 6, 1 / 24, 0.0],
            [1 / 24, 1 / 6, 1 / 24],
            [0.0, 1 / 24, 1 / 6],
        ])
        np.testing.assert_allclose(self.ops.mass.toarray(), expected, rtol=1e-14)

    def test_stiffness_entries(self):
        expected = np.array([[8.0, -4.0, 0.0], [-4.0, 8.0, -4.0], [0.0, -4.0, 8.0]])
        np.testing.assert_allclose(self.ops.stiffness.toarray(), expected, rtol=1e-14)

    def test_cholesky_factor(self):
        ops = assemble_spatial_operators(build_fem_space(1.0, 40))
        M = ops.mass.toarray()
        np.testing.assert_allclose(ops.chol @ ops.chol.T, M, rtol=1e-12, atol=1e-15)
        self.assertTrue(np.allclose(ops.chol, np.tril(ops.chol)))

    def test_mass_matches_quadrature(self):
        ops = assemble_spatial_operators(build_fem_space(1.0, 7))
        x, w = gauss_points(ops.space)
        phi = ops.space.basis_values(x)
        dphi = ops.space.basis_gradients(x)
        np.testing.assert_allclose(phi.T @ (w[:, None] * phi), ops.mass.toarray(), atol=1e-14)
        np.testing.assert_allclose(dphi.T @ (w[:, None] * dphi), ops.stiffness.toarray(), atol=1e-12)


# ===========================================================================
# Convection
# ===========================================================================

class TestConvection(unittest.TestCase):
    """The quadratic convection term and its derivatives."""

    def setUp(self):
        self.ops = assemble_spatial_operators(build_fem_space(1.0, 9))

    def quadrature_convection(self, x):
        points, weights = gauss_points(self.ops.space)
        phi = self.ops.space.basis_values(points)
        v = phi @ x
        dv = self.ops.space.basis_gradients(points) @ x
        return phi.T @ (weights * v * dv)

    def test_matches_quadrature(self):
        rng = np.random.default_rng(3)
        for _ in range(5):
            x = rng.standard_normal(self.ops.q)
            np.testing.assert_allclose(
                self.ops.convection(x), self.quadrature_convection(x), atol=1e-12
            )

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, 9, elements=finite))
    def test_energy_vanishes(self, x):
        energy = x @ self.ops.convection(x)
        self.assertLessEqual(abs(energy), 1e-12 * (1.0 + np.linalg.norm(x) ** 3))

    def test_columnwise_for_matrices(self):
        rng = np.random.default_rng(4)
        X = rng.standard_normal((self.ops.q, 3))
        H = self.ops.convection(X)
        for k in range(3):
            np.testing.assert_allclose(H[:, k], self.ops.convection(X[:, k]))

    def test_jacobian_matches_finite_differences(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal(self.ops.q)
        jac = self.ops.convection_jacobian(x).toarray()
        eps = 1e-6
        fd = np.column_stack([
            (self.ops.convection(x + eps * e) - self.ops.convection(x - eps * e)) / (2 * eps)
            for e in np.eye(self.ops.q)
        ])
        np.testing.assert_allclose(jac, fd, atol=1e-8)

    def test_convection_matrix_consistency(self):
        rng = np.random.default_rng(6)
        x = rng.standard_normal(self.ops.q)
        H = self.ops.convection(x)
        jac = self.ops.convection_jacobian(x).toarray()
        for i in range(self.ops.q):
            A = self.ops.convection_matrix(i).toarray()
            np.testing.assert_allclose(A, A.T)
            self.assertAlmostEqual(x @ A @ x, H[i], places=12)
            np.testing.assert_allclose(2.0 * A @ x, jac[i], atol=1e-12)

    def test_convection_matrix_index_check(self):
        with self.assertRaises(InvalidArgumentError):
            self.ops.convection_matrix(self.ops.q)


# ===========================================================================
# Functions on the space
# ===========================================================================

class TestProjection(unittest.TestCase):
    """L2 projection and interpolation of initial values."""

    def setUp(self):
        self.ops = assemble_spatial_operators(build_fem_space(1.0, 3))

    def test_projection_of_constant(self):
        c = project_function(self.ops, lambda xi: np.ones_like(xi))
        expected = np.linalg.solve(self.ops.mass.toarray(), np.full(3, self.ops.space.h))
        np.testing.assert_allclose(c, expected, rtol=1e-12)

    def test_projection_reproduces_members(self):
        ops = assemble_spatial_operators(build_fem_space(1.0, 12))
        coeffs = np.random.default_rng(7).standard_normal(12)
        c = project_function(ops, lambda xi: ops.space.evaluate(coeffs, xi))
        np.testing.assert_allclose(c, coeffs, atol=1e-12)

    def test_projection_calls_with_flat_points(self):
        ops = assemble_spatial_operators(build_fem_space(1.0, 6))
        seen = []

        def second_basis_function(xi):
            seen.append(np.ndim(xi))
            return ops.space.evaluate(np.eye(6)[1], xi)

        c = project_function(ops, second_basis_function)
        np.testing.assert_allclose(c, np.eye(6)[1], atol=1e-12)
        self.assertEqual(seen, [1])

    def test_projection_of_step(self):
        # the jump at 1/2 sits on the middle node, so Gauss points never hit it
        c = project_function(self.ops, step_initial_value)
        h = self.ops.space.h
        load = np.array([h, 0.5 * h, 0.0])
        np.testing.assert_allclose(c, np.linalg.solve(self.ops.mass.toarray(), load), rtol=1e-12)

    def test_interpolation_of_step(self):
        values = interpolate_function(self.ops.space, step_initial_value)
        np.testing.assert_allclose(values, [1.0, 1.0, 0.0])

    def test_scalar_only_function(self):
        values = interpolate_function(self.ops.space, lambda xi: 2.0 if xi < 0.6 else 0.0)
        np.testing.assert_allclose(values, [2.0, 2.0, 0.0])


class TestTrilinearForm(unittest.TestCase):
    """The tensor of integrals f_m g_n dw_k/dxi."""

    def setUp(self):
        self.ops = assemble_spatial_operators(build_fem_space(1.0, 8))
        self.rng = np.random.default_rng(8)

    def test_matches_quadrature(self):
        space = self.ops.space
        P, Q, R = (self.rng.standard_normal((8, k)) for k in (2, 3, 4))
        T = trilinear_form(space, P, Q, R)
        points, weights = gauss_points(space)
        f = space.basis_values(points) @ P
        g = space.basis_values(points) @ Q
        dw = space.basis_gradients(points) @ R
        expected = np.einsum("x,xm,xn,xk->mnk", weights, f, g, dw)
        np.testing.assert_allclose(T, expected, atol=1e-12)

    def test_identity_recovers_convection(self):
        identity = np.eye(8)
        T = trilinear_form(self.ops.space, identity, identity, identity)
        x = self.rng.standard_normal(8)
        np.testing.assert_allclose(
            np.einsum("ink,n,k->i", T, x, x), self.ops.convection(x), atol=1e-12
        )
        for i in range(8):
            sym = 0.5 * (T[i] + T[i].T)
            np.testing.assert_allclose(sym, self.ops.convection_matrix(i).toarray(), atol=1e-14)

    def test_row_count_check(self):
        with self.assertRaises(InvalidArgumentError):
            trilinear_form(self.ops.space, np.eye(7), np.eye(8), np.eye(8))


if __name__ == "__main__":
    unittest.main()

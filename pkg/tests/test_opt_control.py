"""
Tests for the one-shot reduced optimality system.

Covers:
  - stgpod/opt_control.py: build_optimality_system, optimality_residual,
    optimality_jacobian, solve_optimality, lift_control, closed_loop_evaluate

Run with:  python3 tests/test_opt_control.py
"""

import sys
import unittest
from dataclasses import replace
from pathlib import Path

import numpy as np

REPO_ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(REPO_ROOT))

from stgpod.errors import InvalidArgumentError, InvalidConfigurationError  # noqa: E402
from stgpod.fem_space import (  # noqa: E402
    assemble_spatial_operators,
    build_fem_space,
    project_function,
    step_initial_value,
)
from stgpod.full_order import ControlFunction, solve_adjoint_backward, solve_state_forward  # noqa: E402
from stgpod.gen_measurements import (  # noqa: E402
    combine_measurements,
    measure_trajectory,
    measurement_from_coefficients,
)
from stgpod.gen_pod import ReducedBases, build_reduced_bases  # noqa: E402
from stgpod.opt_control import (  # noqa: E402
    build_optimality_system,
    closed_loop_evaluate,
    lift_control,
    optimality_jacobian,
    optimality_residual,
    solve_optimality,
)
from stgpod.st_galerkin import quadratic_jacobian, solve_reduced_state, unvec, vec  # noqa: E402
from stgpod.time_basis import build_time_basis  # noqa: E402

NU = 0.05
ALPHA = 0.05


class OptimalityCase(unittest.TestCase):
    """Small Burgers control problem with five state and five adjoint modes."""

    q, s, n_t = 20, 11, 40

    @classmethod
    def setUpClass(cls):
        cls.ops = assemble_spatial_operators(build_fem_space(1.0, cls.q))
        cls.tb = build_time_basis(1.0, cls.s)
        cls.x0 = project_function(cls.ops, step_initial_value)
        cls.xstar = np.full(cls.q, 0.25)
        state = solve_state_forward(cls.ops, NU, cls.x0, None, cls.n_t, 1.0)
        adjoint = solve_adjoint_backward(cls.ops, NU, state, cls.xstar)
        cls.meas = combine_measurements([
            measure_trajectory(state, cls.tb, cls.ops),
            measure_trajectory(adjoint, cls.tb, cls.ops),
        ])
        cls.state_bases = build_reduced_bases(cls.meas, 5, 5, "initial-value")
        cls.adjoint_bases = build_reduced_bases(cls.meas, 5, 5, "terminal-value")

    def build(self, **kwargs):
        args = dict(nu=NU, alpha=ALPHA, x0=self.x0, xstar=self.xstar)
        args.update(kwargs)
        return build_optimality_system(
            self.state_bases, self.adjoint_bases, self.ops, self.tb, **args
        )


# ===========================================================================
# Assembly
# ===========================================================================

class TestAssembly(OptimalityCase):
    """Shapes, eliminated blocks and argument checks."""

    def test_size_at_twelve_modes(self):
        rng = np.random.default_rng(51)
        ops = assemble_spatial_operators(build_fem_space(1.0, 20))
        tb = build_time_basis(1.0, 15)
        meas = combine_measurements([
            measurement_from_coefficients(rng.standard_normal((20, 15)), tb, ops) for _ in range(2)
        ])
        system = build_optimality_system(
            build_reduced_bases(meas, 12, 12, "initial-value"),
            build_reduced_bases(meas, 12, 12, "terminal-value"),
            ops, tb, NU, ALPHA, np.zeros(20), np.zeros(20),
        )
        self.assertEqual(system.size, 288)
        self.assertEqual(system.free.size, 288 - 24)

    def test_mixed_matrices(self):
        system = self.build()
        Cv, Cl = system.state.time_coeffs, system.adjoint.time_coeffs
        np.testing.assert_allclose(system.mixed_time, Cv.T @ (self.tb.mass @ Cl), atol=1e-14)
        self.assertEqual(system.mixed_space.shape, (5, 5))

    def test_initial_block(self):
        system = self.build()
        start = system.state.time_values(0.0)
        np.testing.assert_allclose(
            start[0] * system.initial_block, system.state.project_space(self.x0), atol=1e-12
        )

    def test_mode_checks(self):
        with self.assertRaises(InvalidConfigurationError):
            build_optimality_system(
                self.adjoint_bases, self.adjoint_bases, self.ops, self.tb,
                NU, ALPHA, self.x0, self.xstar,
            )
        with self.assertRaises(InvalidConfigurationError):
            build_optimality_system(
                self.state_bases, self.state_bases, self.ops, self.tb,
                NU, ALPHA, self.x0, self.xstar,
            )
        with self.assertRaises(InvalidArgumentError):
            self.build(alpha=0.0)
        with self.assertRaises(InvalidArgumentError):
            self.build(xstar=np.zeros((self.q, self.s + 1)))


# ===========================================================================
# Residual and Jacobian
# ===========================================================================

class TestJacobian(OptimalityCase):
    """Analytic Jacobian of the coupled residual."""

    def test_matches_finite_differences(self):
        system = self.build()
        w = np.random.default_rng(52).standard_normal(system.size)
        jac = optimality_jacobian(system, w)
        eps = 1e-5
        fd = np.column_stack([
            (optimality_residual(system, w + eps * e) - optimality_residual(system, w - eps * e))
            / (2 * eps)
            for e in np.eye(system.size)
        ])
        np.testing.assert_allclose(jac, fd, rtol=1e-6, atol=1e-6)

    def test_adjoint_term_is_transposed_state_jacobian(self):
        adjoint = ReducedBases(
            space=self.state_bases.space,
            time=replace(self.state_bases.time, mode="terminal-value"),
        )
        system = build_optimality_system(
            self.state_bases, adjoint, self.ops, self.tb, NU, ALPHA, self.x0, self.xstar
        )
        rng = np.random.default_rng(53)
        V, Lam = rng.standard_normal((2, 5, 5))
        nonlinear = np.einsum(
            "aj,pr,krj,mpa->mk", V, Lam,
            system.adjoint_time_tensor, system.adjoint_space_tensor,
        )
        J = quadratic_jacobian(system.state.time_tensor, system.state.space_tensor, V)
        np.testing.assert_allclose(nonlinear, unvec(J.T @ vec(Lam), 5, 5), atol=1e-11)


# ===========================================================================
# Solve
# ===========================================================================

class TestSolve(OptimalityCase):
    """Newton and fsolve on the free unknowns."""

    def test_zero_data(self):
        system = self.build(x0=np.zeros(self.q), xstar=np.zeros(self.q))
        V, Lam, diag = solve_optimality(system)
        self.assertEqual(np.abs(V).max(), 0.0)
        self.assertEqual(np.abs(Lam).max(), 0.0)
        self.assertLessEqual(diag.iterations, 1)

    def test_residual_and_eliminated_blocks(self):
        system = self.build()
        V, Lam, diag = solve_optimality(system)
        self.assertEqual(diag.method, "newton")
        residual = optimality_residual(system, np.concatenate([vec(V), vec(Lam)]))
        self.assertLess(np.abs(residual[system.free]).max(), 1e-9)
        np.testing.assert_allclose(V[:, 0], system.initial_block)
        np.testing.assert_array_equal(Lam[:, 0], np.zeros(5))
        self.assertGreaterEqual(diag.walltime, 0.0)

    def test_linear_case_matches_direct_solve(self):
        system = self.build(nonlinear=False)
        V, Lam, diag = solve_optimality(system)
        base = system.constrained()
        free = system.free
        jac = optimality_jacobian(system, base)[np.ix_(free, free)]
        expected = base.copy()
        expected[free] += np.linalg.solve(jac, -optimality_residual(system, base)[free])
        np.testing.assert_allclose(np.concatenate([vec(V), vec(Lam)]), expected, atol=1e-9)
        self.assertEqual(diag.iterations, 1)

    def test_fsolve_agrees_with_newton(self):
        system = self.build()
        V1, Lam1, _ = solve_optimality(system, method="newton")
        V2, Lam2, diag = solve_optimality(system, method="fsolve")
        self.assertEqual(diag.method, "fsolve")
        np.testing.assert_allclose(V2, V1, atol=1e-7)
        np.testing.assert_allclose(Lam2, Lam1, atol=1e-7)

    def test_unknown_method(self):
        with self.assertRaises(InvalidArgumentError):
            solve_optimality(self.build(), method="bisection")

    def test_heavy_penalty_leaves_the_state_uncontrolled(self):
        system = self.build(alpha=1e6)
        V, Lam, _ = solve_optimality(system)
        free_state, _ = solve_reduced_state(system.state, NU, system.state.project_space(self.x0))
        np.testing.assert_allclose(V, free_state, atol=1e-4)
        self.assertLess(np.abs(Lam).max() / 1e6, 1e-4)

    def test_control_shrinks_with_the_penalty(self):
        norms = []
        for alpha in (0.05, 0.5, 5.0, 50.0):
            _, Lam, _ = solve_optimality(self.build(alpha=alpha))
            # the adjoint modes are orthonormal in space and time
            norms.append(np.linalg.norm(Lam) / alpha)
        for smaller, larger in zip(norms, norms[1:]):
            self.assertLessEqual(larger, smaller)
        self.assertGreater(norms[0], 0.0)


# ===========================================================================
# Mode refinement
# ===========================================================================

class TestRefinement(OptimalityCase):
    """More modes move the reduced control towards the full-rank one."""

    def solve(self, qhat, shat):
        meas = combine_measurements(self.meas.parts, normalize=True)
        system = build_optimality_system(
            build_reduced_bases(meas, qhat, shat, "initial-value"),
            build_reduced_bases(meas, qhat, shat, "terminal-value"),
            self.ops, self.tb, NU, ALPHA, self.x0, self.xstar,
        )
        _, Lam, _ = solve_optimality(system)
        times = np.linspace(0.0, 1.0, self.n_t + 1)
        u = lift_control(system, Lam, times)
        result = closed_loop_evaluate(self.ops, NU, self.x0, u, self.xstar, ALPHA, self.n_t, 1.0)
        return u.values, result.J

    def test_more_modes_approach_full_rank(self):
        u_full, J_full = self.solve(self.q, self.s)
        u_coarse, J_coarse = self.solve(2, 2)
        u_fine, J_fine = self.solve(8, 8)
        self.assertLess(np.linalg.norm(u_fine - u_full), np.linalg.norm(u_coarse - u_full))
        self.assertLess(J_fine, J_coarse)
        self.assertLess(abs(J_fine - J_full), abs(J_coarse - J_full))


# ===========================================================================
# Control lift and closed loop
# ===========================================================================

class TestClosedLoop(OptimalityCase):
    """Control reconstruction and evaluation on the full model."""

    def test_lift_of_single_mode(self):
        system = self.build()
        Lam = np.zeros((5, 5))
        Lam[0, 1] = 1.0
        times = np.linspace(0.0, 1.0, 7)
        u = lift_control(system, Lam, times)
        expected = np.outer(
            system.adjoint.time_values(times)[:, 1], system.adjoint.space_coeffs[:, 0]
        ) / ALPHA
        np.testing.assert_allclose(u.values, expected, atol=1e-12)
        np.testing.assert_allclose(u.values[-1], 0.0, atol=1e-12)

    def test_zero_control(self):
        result = closed_loop_evaluate(
            self.ops, NU, self.x0, ControlFunction.zero(self.q, 1.0), self.xstar,
            ALPHA, self.n_t, 1.0, solve_walltime=0.25,
        )
        self.assertAlmostEqual(result.J, result.tracking, places=14)
        self.assertEqual(result.walltime, 0.25)
        self.assertEqual(result.state.values.shape, (self.n_t + 1, self.q))

    def test_control_improves_tracking(self):
        system = self.build()
        V, Lam, diag = solve_optimality(system)
        times = np.linspace(0.0, 1.0, self.n_t + 1)
        u = lift_control(system, Lam, times)
        controlled = closed_loop_evaluate(
            self.ops, NU, self.x0, u, self.xstar, ALPHA, self.n_t, 1.0, diag.walltime
        )
        uncontrolled = closed_loop_evaluate(
            self.ops, NU, self.x0, ControlFunction.zero(self.q, 1.0), self.xstar,
            ALPHA, self.n_t, 1.0,
        )
        self.assertLess(controlled.tracking, uncontrolled.tracking)
        self.assertLessEqual(controlled.tracking, controlled.J)


if __name__ == "__main__":
    unittest.main()

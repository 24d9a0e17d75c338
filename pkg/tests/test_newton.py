"""
test_newton.py

Tests for the damped Newton solvers: the dense real solver, the scalar
complex solver and the batched solver that backs the density marches.
"""

import numpy as np
import pytest

from qf_newton import DEFAULT_OPTIONS, SolverOptions, batched_newton, newton_complex, newton_solve


def test_newton_solve_square_system():
    """Solves x^2 + y^2 = 4, x = y from a nearby start."""
    def f(x):
        return np.array([x[0] ** 2 + x[1] ** 2 - 4.0, x[0] - x[1]])

    res = newton_solve(f, [1.0, 1.5])
    assert res.success
    np.testing.assert_allclose(res.x, [np.sqrt(2.0), np.sqrt(2.0)], atol=1e-10)
    assert res.history[-1] <= DEFAULT_OPTIONS.tol


def test_newton_solve_with_analytic_jacobian():
    """A supplied Jacobian gives the same root."""
    def f(x):
        return np.array([np.exp(x[0]) - 2.0])

    res = newton_solve(f, [0.0], jac=lambda x: np.array([[np.exp(x[0])]]))
    assert res.success
    assert res.x[0] == pytest.approx(np.log(2.0), abs=1e-12)


def test_newton_solve_reports_failure():
    """x^2 + 1 = 0 has no real root; the solver stagnates and says so."""
    res = newton_solve(lambda x: np.array([x[0] ** 2 + 1.0]), [0.3], options=SolverOptions(max_iter=50))
    assert not res.success
    assert res.residual >= 1.0 - 1e-12


def test_newton_solve_non_finite_start():
    """A non-finite residual at the start is a failure, not an exception."""
    res = newton_solve(lambda x: np.array([1.0 / x[0]]), [0.0])
    assert not res.success
    assert res.message.startswith('non-finite')


def test_newton_complex_square_root():
    """z^2 = -4 from a start in the upper half plane reaches 2i."""
    res = newton_complex(lambda z: z * z + 4.0, 1.0 + 1.0j)
    assert res.success
    assert complex(res.x[0]) == pytest.approx(2j, abs=1e-12)


def test_options_with_max_iter():
    """with_max_iter keeps the other settings."""
    opts = SolverOptions(tol=1e-8, residual_tol=1e-6).with_max_iter(7)
    assert (opts.tol, opts.residual_tol, opts.max_iter) == (1e-8, 1e-6, 7)


def test_batched_newton_per_row_parameters():
    """Each row solves x^2 = p with its own parameter."""
    params = np.array([[1.0], [4.0], [9.0], [2.0]])
    res = batched_newton(lambda x, p: x ** 2 - p, np.ones((4, 1)), params)
    assert np.all(res.converged)
    np.testing.assert_allclose(res.x[:, 0], np.sqrt(params[:, 0]), atol=1e-10)


def test_batched_newton_matches_dense_solver():
    """Rows with an analytic Jacobian agree with newton_solve."""
    def system(x, p):
        return np.column_stack([x[:, 0] ** 2 + x[:, 1] ** 2 - p[:, 0], x[:, 0] - 2.0 * x[:, 1]])

    def jac(x, p):
        j = np.zeros((x.shape[0], 2, 2))
        j[:, 0, 0], j[:, 0, 1] = 2 * x[:, 0], 2 * x[:, 1]
        j[:, 1, 0], j[:, 1, 1] = 1.0, -2.0
        return j

    params = np.array([[5.0], [20.0]])
    res = batched_newton(system, np.array([[1.5, 0.5], [3.0, 1.0]]), params, jac=jac)
    assert np.all(res.converged)
    for row, p in zip(res.x, params[:, 0]):
        dense = newton_solve(lambda x: system(x[None, :], np.array([[p]]))[0], row)
        np.testing.assert_allclose(row, dense.x, atol=1e-10)


def test_batched_newton_flags_failed_rows():
    """A row without a real root is reported unconverged; the others still converge."""
    params = np.array([[4.0], [-1.0]])
    res = batched_newton(lambda x, p: x ** 2 - p, np.full((2, 1), 0.5), params)
    assert res.converged.tolist() == [True, False]
    assert res.x[0, 0] == pytest.approx(2.0, abs=1e-10)


def test_batched_newton_empty_and_bad_shapes():
    """Empty batches return immediately; unknowns must be 2-D."""
    res = batched_newton(lambda x, p: x, np.zeros((0, 2)))
    assert res.x.shape == (0, 2) and res.converged.size == 0
    with pytest.raises(ValueError, match="2-D"):
        batched_newton(lambda x, p: x, np.zeros(3))

"""
test_greens.py

Tests for the quaternionic Green's function solver, the density fields built
from it, the regularized delta kernels, the localization check and the
empirical block-resolvent average.
"""

import math

import numpy as np
import pytest

from qf_errors import SingularQuaternionError
from qf_greens import (delta_mass, delta_representation, delta_tail, density_field, elliptic_contour,
                       empirical_greens, fixed_point_residual, localization_check, solve_quaternionic_greens)
from qf_laws import EllipticLaw, add_elliptic
from qf_model import GridSpec, Regime
from qf_quaternion import Quaternion


def _verify_fixed_point(law, q: Quaternion, result, tol: float = 1e-9):
    """The returned value satisfies G (q - R(G)) = 1."""
    assert fixed_point_residual(law.r_transform, q, result.value) <= tol
    assert result.residual <= tol


# --- Fixed Point ---

def test_ginibre_interior_and_exterior():
    """Ginibre: G = conj(z) with Gamma > 0 inside the unit disk, G = 1/z outside."""
    law = EllipticLaw.ginibre()
    inside = solve_quaternionic_greens(law, Quaternion(0.3 + 0.4j, 0))
    assert inside.regime is Regime.INTERIOR
    assert inside.greens == pytest.approx(0.3 - 0.4j, abs=1e-10)
    assert inside.gamma.real == pytest.approx(math.sqrt(0.75), abs=1e-10)
    _verify_fixed_point(law, Quaternion(0.3 + 0.4j, 0), inside)

    outside = solve_quaternionic_greens(law, Quaternion(2.0, 0))
    assert outside.regime is Regime.EXTERIOR
    assert outside.greens == pytest.approx(0.5, abs=1e-10)
    assert abs(outside.gamma) < 1e-12


def test_gue_exterior_on_real_axis():
    """GUE off its support: G is the semicircle resolvent (z - sqrt(z^2 - 4))/2."""
    law = EllipticLaw.gue()
    result = solve_quaternionic_greens(law, Quaternion(3.0, 0))
    assert result.regime is Regime.EXTERIOR
    assert result.greens == pytest.approx((3 - math.sqrt(5)) / 2, abs=1e-10)


@pytest.mark.parametrize("z", [0.2 + 0.1j, -0.7 + 0.3j, 1.2 - 0.2j, 0.1 + 0.9j],
                         ids=["center", "left", "right edge", "upper"])
def test_sum_law_matches_closed_form(z):
    """Ginibre + GUE: the Newton solution equals the elliptic closed form."""
    law = add_elliptic(EllipticLaw.ginibre(), EllipticLaw.gue())
    result = solve_quaternionic_greens(law, Quaternion(z, 0))
    expected, gamma = law.projected_greens(z)
    assert result.greens == pytest.approx(expected, abs=1e-9)
    assert (result.regime is Regime.INTERIOR) == (gamma > 0)


def test_callable_transform_without_closed_form():
    """Any quaternionic R transform works; the Ginibre transform as a lambda gives conj(z) inside."""
    result = solve_quaternionic_greens(lambda q: Quaternion(0, q.second), Quaternion(0.5 - 0.2j, 0))
    assert result.regime is Regime.INTERIOR
    assert result.greens == pytest.approx(0.5 + 0.2j, abs=1e-9)


def test_nonzero_w_matches_empirical_average():
    """At finite w the solution agrees with the block resolvent of large Ginibre samples."""
    law = EllipticLaw.ginibre()
    q = Quaternion(0.3, 0.2)
    result = solve_quaternionic_greens(law, q)
    _verify_fixed_point(law, q, result)
    rng = np.random.default_rng(0)
    n = 300
    samples = [(rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))) / math.sqrt(2 * n) for _ in range(4)]
    emp = empirical_greens(samples, q)
    assert abs(emp.first - result.value.first) < 0.03
    assert abs(emp.second - result.value.second) < 0.03


# --- Density ---

def test_ginibre_density_values():
    """1/pi inside the unit disk, 0 outside."""
    grid = GridSpec(-1.6, 1.6, -1.6, 1.6, 16, 16)
    density = density_field(EllipticLaw.ginibre(), grid, max_workers=2)
    assert density.invalid_count == 0
    centers = grid.centers()
    inner = np.abs(centers) < 0.8
    outer = np.abs(centers) > 1.2
    np.testing.assert_allclose(density.values[inner], 1 / math.pi, atol=1e-6)
    np.testing.assert_allclose(density.values[outer], 0.0, atol=1e-6)
    assert np.all(density.imag_residue[inner] < 1e-6)


def test_elliptic_density_and_mass():
    """The sum law is uniform on its ellipse; total mass is close to one."""
    law = add_elliptic(EllipticLaw.ginibre(), EllipticLaw.gue())
    grid = GridSpec(-2.5, 2.5, -1.2, 1.2, 40, 20)
    density = density_field(law, grid)
    assert density.value_at(0.1 + 0.1j) == pytest.approx(law.interior_density(), abs=1e-6)
    assert density.total_mass() == pytest.approx(1.0, abs=0.1)


def test_density_independent_of_workers():
    """Row tasks make the field identical for any worker count."""
    grid = GridSpec(-1.5, 1.5, -1.5, 1.5, 8, 8)
    law = EllipticLaw(0.1, 1.0, 0.3, 0.4)
    a = density_field(law, grid, max_workers=1)
    b = density_field(law, grid, max_workers=4)
    np.testing.assert_array_equal(a.values, b.values)


def test_density_grid_minimum():
    """Grids below 8x8 are rejected."""
    with pytest.raises(ValueError, match="8x8"):
        density_field(EllipticLaw.ginibre(), GridSpec(-1, 1, -1, 1, 4, 4))


# --- Delta Kernels ---

def test_delta_kernel_values():
    """At z = 0, |w| = 1 the first part is 1/pi; w = 0 is zero off the origin."""
    assert delta_representation(0, 1).real == pytest.approx(1 / math.pi)
    assert abs(delta_representation(0, 1j, 'second')) == pytest.approx(1 / math.pi)
    assert delta_representation(0.5, 0) == 0
    with pytest.raises(SingularQuaternionError):
        delta_representation(0, 0)
    with pytest.raises(ValueError, match="'first' or 'second'"):
        delta_representation(0, 1, 'third')


def test_delta_kernel_is_dzbar_of_inverse():
    """The first part equals (1/pi) d/dz-bar of the first component of q^-1."""
    z, w, h = 0.3 - 0.2j, 0.4, 1e-5
    f = lambda zz: Quaternion(zz, w).inverse().first
    dzbar = 0.5 * ((f(z + h) - f(z - h)) / (2 * h) + 1j * (f(z + 1j * h) - f(z - 1j * h)) / (2 * h))
    assert delta_representation(z, w).real == pytest.approx(dzbar.real / math.pi, rel=1e-6)


def test_delta_kernel_mass():
    """The kernel integrates to one; the mass outside |z| <= 20 is |w|^2/(R^2 + |w|^2)."""
    w, radius = 0.1, 20.0
    inside = delta_mass(w, radius)
    assert inside >= 0.999
    assert inside + delta_tail(w, radius) == pytest.approx(1.0, abs=1e-8)


# --- Localization ---

def test_localization_at_eigenvalues():
    """At an eigenvalue the smallest eigenvalue of H_L is |w|^2."""
    rng = np.random.default_rng(2)
    x = rng.standard_normal((30, 30)) + 1j * rng.standard_normal((30, 30))
    lam = np.linalg.eigvals(x)[0]
    report = localization_check(x, lam, 0.1)
    assert report.deviation <= 1e-10 * np.linalg.norm(x, 2) ** 2


@pytest.mark.parametrize("seed", range(20))
def test_localization_at_every_eigenvalue(seed):
    """Every eigenvalue of a random 50 x 50 matrix localizes H_L at |w|^2."""
    rng = np.random.default_rng(100 + seed)
    x = rng.standard_normal((50, 50)) + 1j * rng.standard_normal((50, 50))
    tol = 1e-10 * np.linalg.norm(x, 2) ** 2
    for lam in np.linalg.eigvals(x):
        assert localization_check(x, lam, 0.2).deviation <= tol


def test_localization_normal_matrix_and_zero():
    """Normal X off its spectrum adds dist(z, spec)^2; X = 0 gives |w|^2 exactly."""
    x = np.diag([1.0, 2.0 + 1j, -1.0])
    report = localization_check(x, 0.5, 0.2)
    assert report.min_eig_hl == pytest.approx(0.04 + 0.25, abs=1e-12)
    assert localization_check(np.zeros((3, 3)), 0, 0.3).min_eig_hl == pytest.approx(0.09, abs=1e-15)


# --- Contours ---

def test_elliptic_contour():
    """One closed branch on the ellipse; deterministic laws have none."""
    law = EllipticLaw(0, 1, 0.5, 0)
    curve = elliptic_contour(law, 180)
    assert curve.branch_count == 1
    z = curve.points(0)
    assert np.all(np.abs((z.real / 1.5) ** 2 + (z.imag / 0.5) ** 2 - 1) < 1e-12)
    assert elliptic_contour(EllipticLaw.shift(1.0)).branch_count == 0

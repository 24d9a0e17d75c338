"""
test_product.py

Tests for the multiplication law and the reduced product families: shifted
Ginibre products, symmetric shifted elliptic products and the shifted GUE
times shifted Ginibre product.
"""

import cmath
import math

import numpy as np
import pytest

from qf_errors import UnsupportedSpecError
from qf_laws import EllipticLaw
from qf_model import GridSpec, Regime
from qf_product import (ProductLaw, ginibre_reduction, gue_ginibre_boundary, gue_ginibre_contour, gue_ginibre_curve,
                        gue_ginibre_residual, is_gue_ginibre, multiplication_law_solve, product_contour,
                        product_density_at, product_density_field, shifted_elliptic_contour, shifted_elliptic_curve,
                        shifted_elliptic_exterior_w, shifted_elliptic_greens, shifted_elliptic_interior,
                        shifted_elliptic_mu, shifted_elliptic_residuals, shifted_ginibre_contour,
                        shifted_ginibre_greens, shifted_ginibre_interior, shifted_ginibre_quartic,
                        shifted_ginibre_residuals)

ONE_PLUS_X = EllipticLaw(1, 1, 0, 0)


# --- Shifted Ginibre Products ---

def test_quartic_contour_radii():
    """(1 + X1)(1 + X2) crosses the positive axis at 1 and 3; X1 X2 at 1; nothing at phi = pi."""
    assert shifted_ginibre_contour(1, 1, 0) == pytest.approx([1.0, 3.0], abs=1e-12)
    assert shifted_ginibre_contour(0, 0, 0.4) == pytest.approx([1.0], abs=1e-12)
    assert shifted_ginibre_contour(1, 1, math.pi) == []


@pytest.mark.parametrize("s", [0.0, 0.5, 2.0])
def test_one_shift_gives_circle(s):
    """(s + X1) X2 is supported on the disk of radius sqrt(1 + s^2) at every angle."""
    for phi in (0.0, 1.0, 2.5):
        assert shifted_ginibre_contour(s, 0, phi) == pytest.approx([math.sqrt(1 + s * s)], abs=1e-10)


def test_negative_shift_rejected():
    with pytest.raises(ValueError, match="nonnegative"):
        shifted_ginibre_contour(-1, 1, 0)


@pytest.mark.parametrize("phi", [0.0, 0.4, 1.3, 2.9])
def test_quartic_factorizations(phi):
    """s = t = 0 gives r^2 (r^2 - 1); s = t = 1 gives r^2 (r - 2cos(phi) - 1)(r - 2cos(phi) + 1)."""
    np.testing.assert_allclose(shifted_ginibre_quartic(0, 0, phi), np.polymul([1, 0, 0], [1, 0, -1]), atol=1e-12)
    c = math.cos(phi)
    limacon = np.polymul([1, 0, 0], np.polymul([1, -2 * c - 1], [1, -2 * c + 1]))
    np.testing.assert_allclose(shifted_ginibre_quartic(1, 1, phi), limacon, atol=1e-12)


def test_reduced_equations_are_odd_in_v():
    """(-v_A, -v_B) solves the reduced equations whenever (v_A, v_B) does."""
    z = 2.0 + 0.3j
    va, vb = shifted_ginibre_interior(1, 1, z)
    flipped = shifted_ginibre_residuals(1, 1, z, -va, -vb)
    np.testing.assert_allclose(flipped, -shifted_ginibre_residuals(1, 1, z, va, vb), atol=1e-15)
    assert np.max(np.abs(flipped)) < 1e-9


@pytest.mark.parametrize("z", [3.5, 2 - 4j, -1.5 + 0.2j, 10j])
def test_shifted_ginibre_exterior_greens(z):
    """With v_A = v_B = 0 the Green's function is 1/(z - st)."""
    assert shifted_ginibre_greens(0.9, 1.2, z, 0, 0) == pytest.approx(1 / (z - 1.08), abs=1e-12)
    assert shifted_ginibre_greens(1, 1, 3, 0, 0) == pytest.approx(0.5)


def test_shifted_ginibre_interior_solution():
    """Between the contour radii both v are positive and the reduced equations hold."""
    va, vb = shifted_ginibre_interior(1, 1, 2.0 + 0.3j)
    assert va > 0 and vb > 0
    assert np.max(np.abs(shifted_ginibre_residuals(1, 1, 2.0 + 0.3j, va, vb))) < 1e-9
    assert shifted_ginibre_interior(1, 1, 4.0) == (0.0, 0.0)
    assert shifted_ginibre_interior(1, 1, -2.0) == (0.0, 0.0)


def test_shifted_ginibre_interior_needs_both_shifts():
    with pytest.raises(ValueError, match="s\\*t > 0"):
        shifted_ginibre_interior(0, 1, 0.5)


def test_reduced_greens_matches_multiplication_law():
    """The closed form from the reduced solution equals G_AB of the generic solver."""
    z = 2.0 + 0.3j
    va, vb = shifted_ginibre_interior(1, 1, z)
    generic = multiplication_law_solve(ProductLaw(ONE_PLUS_X, ONE_PLUS_X), z)
    assert generic.regime is Regime.INTERIOR
    assert generic.residual < 1e-9
    assert generic.greens == pytest.approx(shifted_ginibre_greens(1, 1, z, va, vb), abs=1e-7)


# --- Generic Multiplication Law ---

def test_far_field_is_exterior():
    """Far from the support G_AB = 1/(z - x_A x_B)."""
    p = ProductLaw(EllipticLaw(1, 0.5, 0.3, 0), EllipticLaw(2, 0.5, 0, 0))
    sol = multiplication_law_solve(p, 20 + 5j)
    assert sol.regime is Regime.EXTERIOR
    assert sol.greens == pytest.approx(1 / (20 + 5j - 2), rel=1e-2)
    assert (sol.v_a, sol.v_b) == (0.0, 0.0)


def test_multiplication_law_rejects_origin_and_bad_phase():
    p = ProductLaw(EllipticLaw.ginibre(), EllipticLaw.ginibre())
    with pytest.raises(ValueError, match="z != 0"):
        multiplication_law_solve(p, 0)
    with pytest.raises(ValueError, match="does not match"):
        multiplication_law_solve(p, 1j, phase=0.0)


@pytest.mark.parametrize("law", [EllipticLaw.ginibre(), EllipticLaw.gue()], ids=["ginibre", "gue"])
def test_squared_gaussian_density(law):
    """Products of two free Ginibre or two free GUE matrices have density 1/(2 pi |z|) in the unit disk."""
    p = ProductLaw(law, law)
    z = 0.5 * cmath.exp(0.3j)
    center = multiplication_law_solve(p, z)
    assert center.regime is Regime.INTERIOR
    assert center.v_a > 0
    rho = product_density_at(p, z, center)
    assert rho.real == pytest.approx(1 / math.pi, abs=1e-3)
    assert abs(rho.imag) < 1e-3


@pytest.mark.parametrize("radius", [0.2, 0.35, 0.7, 0.95])
def test_squared_gue_radial_profile(radius):
    """The density of H1 H2 is 1/(2 pi |z|) across the unit disk."""
    p = ProductLaw(EllipticLaw.gue(), EllipticLaw.gue())
    z = radius * cmath.exp(0.3j)
    rho = product_density_at(p, z, multiplication_law_solve(p, z))
    assert rho.real == pytest.approx(1 / (2 * math.pi * radius), abs=1e-3)


def test_warm_start_continues_phase():
    """A seed carries its rotation angle across the negative real axis."""
    p = ProductLaw(EllipticLaw.ginibre(), EllipticLaw.ginibre())
    first = multiplication_law_solve(p, -0.5 + 0.01j)
    second = multiplication_law_solve(p, -0.5 - 0.01j, seed=first)
    assert second.phase == pytest.approx(first.phase + cmath.phase((-0.5 - 0.01j) / (-0.5 + 0.01j)))
    assert second.greens == pytest.approx(multiplication_law_solve(p, -0.5 - 0.01j).greens, abs=1e-8)


# --- Symmetric Shifted Elliptic Products ---

def test_shifted_elliptic_exterior_w():
    """mu = 0 gives 1/(z - 1); otherwise the root that decays like 1/z."""
    assert shifted_elliptic_exterior_w(0, 3 + 1j) == pytest.approx(1 / (2 + 1j))
    mu, z = 0.4, 1e4 + 0j
    w = shifted_elliptic_exterior_w(mu, z)
    assert w * z == pytest.approx(1.0, abs=1e-3)
    assert abs(mu * mu * w ** 3 + 2 * mu * w * w + (1 + mu - z) * w + 1) < 1e-9


def test_shifted_elliptic_contour_at_zero_mu():
    """At mu = 0 the outer edge coincides with (1 + X)(1 + X)."""
    radii = shifted_elliptic_contour(0.0, 0.0)
    assert radii == pytest.approx([3.0], abs=1e-9)
    assert radii[-1] == pytest.approx(max(shifted_ginibre_contour(1, 1, 0)), abs=1e-9)


def test_shifted_elliptic_contour_symmetry_and_residual():
    """Mirror symmetry in phi; the continued contour satisfies its boundary equations."""
    mu = 0.5
    up, down = shifted_elliptic_contour(mu, 0.8), shifted_elliptic_contour(mu, -0.8)
    assert up == pytest.approx(down, abs=1e-12)
    assert len(shifted_elliptic_contour(mu, 0.0)) == 1
    assert shifted_elliptic_contour(mu, 0.0)[0] > 3.0
    curve = shifted_elliptic_curve(mu, 120)
    assert curve.branch_count >= 1
    assert curve.residual < 1e-9
    with pytest.raises(ValueError, match="mu"):
        shifted_elliptic_contour(1.0, 0.0)


def test_shifted_elliptic_interior_solution():
    """Inside the outer edge v > 0 and the symmetric equations hold; outside v = 0."""
    mu, z = 0.3, 2.0 + 0.5j
    w, v = shifted_elliptic_interior(mu, z)
    assert v > 0
    assert np.max(np.abs(shifted_elliptic_residuals(mu, z, w, v))) < 1e-9
    w_out, v_out = shifted_elliptic_interior(mu, 8.0)
    assert v_out == 0.0
    assert shifted_elliptic_greens(mu, 8.0, w_out, 0) == pytest.approx(1 / (8.0 - (1 + mu * w_out) ** 2))


@pytest.mark.parametrize("phi, r", [(0.0, 2.0), (0.3, 1.9), (-0.3, 1.9), (0.6, 1.65), (-0.6, 1.65),
                                    (1.0, 1.5), (-1.0, 1.5), (1.3, 1.0), (-1.3, 1.0), (1.8, 0.3)])
def test_shifted_elliptic_at_zero_mu_matches_ginibre(phi, r):
    """At mu = 0 the symmetric solution is v_A = v_B of (1 + X1)(1 + X2)."""
    z = r * cmath.exp(1j * phi)
    w, v = shifted_elliptic_interior(0.0, z)
    va, vb = shifted_ginibre_interior(1, 1, z)
    assert abs(v) == pytest.approx(va, abs=1e-9)
    assert abs(v) == pytest.approx(vb, abs=1e-9)
    assert shifted_elliptic_greens(0.0, z, w, v) == pytest.approx(shifted_ginibre_greens(1, 1, z, va, vb), abs=1e-7)


# --- Shifted GUE Times Shifted Ginibre ---

def test_gue_ginibre_lobes():
    """The outer lobe reaches about 3.74 on the positive axis, the inner one about 1.07 on the negative axis."""
    assert gue_ginibre_contour(0.0) == pytest.approx([(1 + math.sqrt(13)) / 2 + 1 + (math.sqrt(13) - 1) / 6], abs=1e-9)
    assert gue_ginibre_contour(0.0)[0] == pytest.approx(3.737, abs=1e-3)
    assert gue_ginibre_contour(math.pi) == pytest.approx([1.070], abs=1e-3)
    for phi in (0.0, 0.7, 2.0, math.pi):
        for wb, wa, r in gue_ginibre_boundary(phi):
            assert abs(wb) <= 1.0
            assert gue_ginibre_residual(phi, wb, wa, r) < 1e-9


def test_gue_ginibre_curve_has_two_branches():
    curve = gue_ginibre_curve(360)
    assert curve.branch_count == 2
    assert curve.residual < 1e-9


@pytest.mark.parametrize("phi_samples", [360, 500, 720])
def test_gue_ginibre_branches_close_at_origin(phi_samples):
    """Each lobe starts and ends at z = 0, the outer one at +-pi/3 and the inner one at +-5pi/6."""
    curve = gue_ginibre_curve(phi_samples)
    assert curve.branch_count == 2
    assert curve.residual < 1e-9
    ends = []
    for branch in curve.branches:
        assert branch[0, 1] <= 1e-3 and branch[-1, 1] <= 1e-3
        ends += [branch[0, 0], branch[-1, 0]]
    angles = sorted(np.abs(np.angle(np.exp(1j * np.array(ends)))))
    assert angles == pytest.approx([math.pi / 3] * 2 + [5 * math.pi / 6] * 2, abs=1e-6)


def test_gue_ginibre_outer_lobe_near_touching_angle():
    """Just inside phi = pi/3 the outer radius is about 4 sqrt(3) times the angular gap."""
    eps = 1e-4
    assert gue_ginibre_contour(math.pi / 3 - eps) == pytest.approx([4 * math.sqrt(3) * eps], rel=1e-3)
    assert gue_ginibre_contour(math.pi / 3 + eps) == []


# --- Dispatch ---

def test_family_recognition():
    a = EllipticLaw(2, 2, 0, 0)
    b = EllipticLaw(-1, 1, 0, 0)
    reduction = ginibre_reduction(ProductLaw(a, b))
    assert (reduction.s, reduction.t) == (1.0, 1.0)
    assert reduction.u == pytest.approx(-2.0)
    e = EllipticLaw(1, 1, 0.8, 0)
    assert shifted_elliptic_mu(ProductLaw(e, e)) == 0.8
    assert shifted_elliptic_mu(ProductLaw(e, ONE_PLUS_X)) is None
    assert is_gue_ginibre(ProductLaw(ONE_PLUS_X, EllipticLaw(1, 1, 1, 0)))


def test_product_contour_scaling_and_unsupported():
    """(2 + 2X1)(1 + X2) is twice (1 + X1)(1 + X2); unrelated pairs have no contour equation."""
    base = product_contour(ProductLaw(ONE_PLUS_X, ONE_PLUS_X), 360)
    scaled = product_contour(ProductLaw(EllipticLaw(2, 2, 0, 0), ONE_PLUS_X), 360)
    assert base.branch_count == scaled.branch_count == 2
    outer = max(np.max(np.abs(base.points(k))) for k in range(2))
    assert outer == pytest.approx(3.0, abs=1e-9)
    assert max(np.max(np.abs(scaled.points(k))) for k in range(2)) == pytest.approx(6.0, abs=1e-9)
    with pytest.raises(UnsupportedSpecError):
        product_contour(ProductLaw(EllipticLaw(0, 1, 0.5, 0), EllipticLaw(2, 1, 0, 0)))


def test_product_density_field_shifted_ginibre():
    """The reduced march gives a positive density inside the outer loop and zero outside."""
    grid = GridSpec(-1.5, 3.5, -2.5, 2.5, 20, 20)
    density = product_density_field(ProductLaw(ONE_PLUS_X, ONE_PLUS_X), grid, max_workers=2)
    assert density.invalid_count <= 0.1 * grid.nx * grid.ny
    assert density.value_at(2.0 + 0.1j) > 0
    far = np.abs(grid.centers()) > 3.3
    assert np.all(density.values[far] < 1e-8)
    with pytest.raises(ValueError, match="8x8"):
        product_density_field(ProductLaw(ONE_PLUS_X, ONE_PLUS_X), GridSpec(-1, 1, -1, 1, 4, 8))


def test_product_density_field_swap_symmetry():
    """AB and BA have the same spectrum."""
    grid = GridSpec(-1.5, 4.5, -3.0, 3.0, 10, 10)
    a, b = EllipticLaw(0.9, 1, 0, 0), EllipticLaw(1.2, 1, 0, 0)
    ab = product_density_field(ProductLaw(a, b), grid, max_workers=2)
    ba = product_density_field(ProductLaw(a, b).swapped(), grid, max_workers=2)
    np.testing.assert_array_equal(ab.valid, ba.valid)
    np.testing.assert_allclose(ab.values[ab.valid], ba.values[ba.valid], atol=1e-9)


def _product_mass(p: ProductLaw) -> float:
    x0, x1, y0, y1 = product_contour(p, 720).bounding_box(0.25)
    return product_density_field(p, GridSpec(x0, x1, y0, y1, 120, 120)).total_mass()


@pytest.mark.slow
@pytest.mark.parametrize("s, t", [(0.9, 1.2), (1.2, 1.3)])
def test_shifted_ginibre_density_mass(s, t):
    assert 0.98 <= _product_mass(ProductLaw(EllipticLaw(s, 1, 0, 0), EllipticLaw(t, 1, 0, 0))) <= 1.02


@pytest.mark.slow
@pytest.mark.parametrize("mu", [1 / 3, 4 / 5])
def test_shifted_elliptic_density_mass(mu):
    e = EllipticLaw(1, 1, mu, 0)
    assert 0.98 <= _product_mass(ProductLaw(e, e)) <= 1.02

"""
qf_product.py

This module implements the quaternionic multiplication law for the product AB
of two free elliptic factors, together with three reduced product families:

1.  `multiplication_law_solve` solves the coupled system for G_A, G_B and G_AB
    at one point. It marches radially from far outside the support and
    switches to the non-holomorphic branch once one appears.
2.  Shifted Ginibre products (s + X1)(t + X2): quartic contour, reduced real
    interior equations and the closed-form Green's function. Every product
    (a + b X1)(c + d X2) of Ginibre-type factors reduces to u (s + X1)(t + X2).
3.  Symmetric shifted elliptic products (1 + E)(1 + E).
4.  The shifted GUE times shifted Ginibre product (1 + H)(1 + X), whose support
    is two loops touching at the origin.

Interior solutions carry v > 0 and the exterior (holomorphic) branch has
v = 0. Densities follow from rho = (1/pi) dG/dz-bar on a 4-point stencil.
"""

import cmath
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np

from qf_errors import NoConvergenceError, SingularQuaternionError, UnsupportedSpecError
from qf_greens import FD_RELATIVE_STEP, assemble_density, dzbar_of_greens, report_density
from qf_laws import EllipticLaw, wrap_angle
from qf_model import ContourCurve, DensityGrid, GridSpec, Regime
from qf_newton import DEFAULT_OPTIONS, BatchedSystem, SolverOptions, batched_newton, newton_solve
from qf_quaternion import Quaternion

logger = logging.getLogger(__name__)

V_MIN = 1e-7
SEED_V = tuple(float(v) for v in np.geomspace(1e-3, 2.0, 8))
MARCH_STEPS = 24
GENERIC_MARCH_STEPS = 40
SEARCH_ITER = 25
ROOT_IMAG_TOL = 1e-6
ROOT_MIN = 1e-9
BOUNDARY_STEP = math.pi / 360
BISECTION_STEPS = 60

# March status codes.
FAILED, EXTERIOR, INTERIOR = -1, 0, 1


# --- Product Laws ---

@dataclass(frozen=True)
class ProductLaw:
    """The product AB of two free elliptic factors."""
    factor_a: EllipticLaw
    factor_b: EllipticLaw

    def swapped(self) -> 'ProductLaw':
        return ProductLaw(self.factor_b, self.factor_a)

    @property
    def outer_radius(self) -> float:
        """A radius safely outside the support of AB."""
        ra = abs(self.factor_a.x) + 2.0 * self.factor_a.sigma
        rb = abs(self.factor_b.x) + 2.0 * self.factor_b.sigma
        return 1.5 * ra * rb + 0.5


@dataclass(frozen=True)
class ProductPointSolution:
    """
    Solution of the multiplication law at one point z.

    `v_a` is real nonnegative by gauge choice. `v_b` is reported by modulus with
    the sign of Re(v_a conj(v_b)). `phase` is the rotation angle used (Arg z up
    to a multiple of 2 pi) and `state` is the raw vector of unknowns, kept for
    warm starts.
    """
    z: complex
    w_a: complex
    w_b: complex
    v_a: float
    v_b: float
    greens: complex
    regime: Regime
    residual: float
    phase: float = 0.0
    state: Tuple[float, ...] = field(default=(), repr=False, compare=False)

    @property
    def r(self) -> float:
        return abs(self.z)

    @property
    def phi(self) -> float:
        return cmath.phase(self.z)


# --- Generic Multiplication Law ---

def _factors_from_state(x: np.ndarray) -> Tuple[Quaternion, Quaternion]:
    if x.size == 7:
        return Quaternion(complex(x[0], x[1]), x[2]), Quaternion(complex(x[3], x[4]), complex(x[5], x[6]))
    return Quaternion(complex(x[0], x[1])), Quaternion(complex(x[2], x[3]))


def product_greens_quaternion(p: ProductLaw, z: complex, phase: float, ga: Quaternion,
                              gb: Quaternion) -> Tuple[Quaternion, Quaternion, Quaternion]:
    """
    Returns (G_AB, P, Q) with P = [R_A(G_B)]^L, Q = [R_B(G_A)]^R and
    G_AB = (z - P Q)^-1.
    """
    left = p.factor_a.r_transform(gb).rotate(phase, 'L')
    right = p.factor_b.r_transform(ga).rotate(phase, 'R')
    return (Quaternion(z) - left * right).inverse(), left, right


def multiplication_law_residual(p: ProductLaw, z: complex, phase: float, ga: Quaternion,
                                gb: Quaternion) -> np.ndarray:
    """The 8 real residuals of [G_A]^R = G_AB P and [G_B]^L = Q G_AB."""
    gab, left, right = product_greens_quaternion(p, z, phase, ga, gb)
    e_a = ga.rotate(phase, 'R') - gab * left
    e_b = gb.rotate(phase, 'L') - right * gab
    return np.array([e_a.first.real, e_a.first.imag, e_a.second.real, e_a.second.imag,
                     e_b.first.real, e_b.first.imag, e_b.second.real, e_b.second.imag])


def _state_residual(p: ProductLaw, z: complex, phase: float, x: np.ndarray) -> np.ndarray:
    ga, gb = _factors_from_state(x)
    return multiplication_law_residual(p, z, phase, ga, gb)


def _normalize_state(x: np.ndarray) -> np.ndarray:
    # Conjugation by the unit i flips the sign of every second part.
    if x.size == 7 and x[2] < 0:
        x = x.copy()
        x[[2, 5, 6]] *= -1
    return x


def _solution(p: ProductLaw, z: complex, phase: float, x: np.ndarray, regime: Regime) -> ProductPointSolution:
    ga, gb = _factors_from_state(x)
    gab, _, _ = product_greens_quaternion(p, z, phase, ga, gb)
    residual = float(np.linalg.norm(multiplication_law_residual(p, z, phase, ga, gb)))
    v_a = v_b = 0.0
    if regime is Regime.INTERIOR:
        v_a = float(x[2])
        v_b = math.copysign(abs(gb.second), gb.second.real)
    return ProductPointSolution(z, ga.first, gb.first, v_a, v_b, gab.first, regime, residual, phase,
                                tuple(float(v) for v in x))


def _newton_interior(p: ProductLaw, z: complex, phase: float, x0: np.ndarray,
                     opts: SolverOptions) -> Optional[np.ndarray]:
    res = newton_solve(lambda x: _state_residual(p, z, phase, x), x0, options=opts)
    if not res.success: return None
    x = _normalize_state(res.x)
    return x if x[2] > V_MIN else None


def _newton_exterior(p: ProductLaw, z: complex, phase: float, x0: np.ndarray,
                     opts: SolverOptions) -> Optional[np.ndarray]:
    res = newton_solve(lambda x: _state_residual(p, z, phase, x), x0, options=opts)
    return res.x if res.success else None


def _search_interior(p: ProductLaw, z: complex, phase: float, ext: np.ndarray, opts: SolverOptions,
                    trace: List[str]) -> Optional[np.ndarray]:
    """Small-to-large v seeds around the exterior solution; the first nontrivial root wins."""
    search_opts = opts.with_max_iter(min(opts.max_iter, SEARCH_ITER))
    for v in SEED_V:
        x0 = np.array([ext[0], ext[1], v, ext[2], ext[3], v, 0.0])
        found = _newton_interior(p, z, phase, x0, search_opts)
        if found is not None: return found
    trace.append(f"no interior branch at |z|={abs(z):.6g}")
    return None


def _radial_march(p: ProductLaw, z: complex, phase: float, opts: SolverOptions) -> ProductPointSolution:
    r_target = abs(z)
    unit = cmath.exp(1j * phase)
    r_far = max(p.outer_radius, r_target)
    radii = np.geomspace(r_far, r_target, GENERIC_MARCH_STEPS) if r_far > r_target else np.array([r_target])
    z0 = radii[0] * unit
    wa0, wb0 = p.factor_a.x / z0, p.factor_b.x / z0
    ext = np.array([wa0.real, wa0.imag, wb0.real, wb0.imag])
    ext_ok, interior, trace = False, None, []
    for rk in radii:
        zk = rk * unit
        if interior is not None:
            interior = _newton_interior(p, zk, phase, interior, opts)
        found = _newton_exterior(p, zk, phase, ext, opts)
        ext_ok = found is not None
        if ext_ok: ext = found
        else: trace.append(f"exterior failed at |z|={rk:.6g}")
        if interior is None:
            interior = _search_interior(p, zk, phase, ext, opts, trace)
        logger.debug("March |z|=%.6g: interior=%s", rk, interior is not None)
    if interior is not None: return _solution(p, z, phase, interior, Regime.INTERIOR)
    if ext_ok: return _solution(p, z, phase, ext, Regime.EXTERIOR)
    raise NoConvergenceError(f"No branch of the multiplication law converged at z={z}", float('inf'), trace[-5:])


def _refine(p: ProductLaw, z: complex, phase: float, seed: ProductPointSolution, opts: SolverOptions,
            search: bool) -> Optional[ProductPointSolution]:
    x = np.asarray(seed.state, dtype=float)
    if x.size == 7:
        if seed.regime is Regime.INTERIOR:
            found = _newton_interior(p, z, phase, x, opts)
            if found is not None: return _solution(p, z, phase, found, Regime.INTERIOR)
        x = x[[0, 1, 3, 4]]
    if x.size != 4: return None
    ext = _newton_exterior(p, z, phase, x, opts)
    if ext is None: return None
    if search:
        found = _search_interior(p, z, phase, ext, opts, [])
        if found is not None: return _solution(p, z, phase, found, Regime.INTERIOR)
    return _solution(p, z, phase, ext, Regime.EXTERIOR)


def multiplication_law_solve(p: ProductLaw, z: complex, seed: Optional[ProductPointSolution] = None,
                             options: Optional[SolverOptions] = None, phase: Optional[float] = None,
                             search: bool = True) -> ProductPointSolution:
    """
    Solves the multiplication law of AB at z != 0.

    The unknowns are G_A = (w_A, v_A) with v_A real and G_B = (w_B, v_B); the
    rotations use the angle `phase`, which defaults to Arg z, or to the seed's
    angle continued to z when a seed is given.

    Args:
        p (ProductLaw): The two factors.
        z (complex): The point.
        seed (ProductPointSolution): Optional warm start, usually a neighbouring point.
        options (SolverOptions): Solver tolerances.
        phase (float): Rotation angle; must satisfy e^{i phase} = z/|z|.
        search (bool): Whether to look for an interior branch when the seed is exterior.

    Returns:
        ProductPointSolution: The interior solution when one converges with v > 0,
        else the exterior one.
    """
    z = complex(z)
    if z == 0: raise ValueError("The multiplication law needs z != 0 to define the rotations.")
    opts = options or DEFAULT_OPTIONS
    if phase is None:
        phase = seed.phase + cmath.phase(z / seed.z) if seed is not None else cmath.phase(z)
    elif abs(cmath.exp(1j * phase) - z / abs(z)) > 1e-9:
        raise ValueError(f"Rotation angle {phase} does not match Arg z for z={z}.")
    if seed is not None:
        out = _refine(p, z, phase, seed, opts, search)
        if out is not None: return out
        logger.debug("Warm start failed at z=%s; marching from outside.", z)
    return _radial_march(p, z, phase, opts)


def product_density_at(p: ProductLaw, z: complex, center: Optional[ProductPointSolution] = None,
                       options: Optional[SolverOptions] = None) -> complex:
    """(1/pi) dG_AB/dz-bar at z from the generic solver; the imaginary part should vanish."""
    opts = options or DEFAULT_OPTIONS
    if center is None: center = multiplication_law_solve(p, z, options=opts)

    def solve(zp: complex, state: ProductPointSolution):
        out = multiplication_law_solve(p, zp, seed=state, options=opts, search=False)
        return out.greens, out

    return dzbar_of_greens(solve, center.z, center) / math.pi


def _generic_density_row(p: ProductLaw, grid: GridSpec, j: int, opts: SolverOptions):
    nx = grid.nx
    values, valid, imag = np.zeros(nx), np.zeros(nx, dtype=bool), np.zeros(nx)
    y = grid.y_centers[j]
    dx = (grid.x_max - grid.x_min) / nx
    previous: Optional[ProductPointSolution] = None
    for i, x in enumerate(grid.x_centers):
        z = complex(x, y)
        if z == 0: z = complex(0.25 * dx, 0.0)
        try:
            center = multiplication_law_solve(p, z, seed=previous, options=opts)
            d = product_density_at(p, z, center, opts)
        except ValueError as exc:
            logger.debug("Cell (%d, %d) at z=%s failed: %s", i, j, z, exc)
            previous = None
            continue
        previous = center
        values[i], imag[i], valid[i] = max(d.real, 0.0), abs(d.imag), True
    return values, valid, imag


# --- Vectorized Inward Marches ---

@dataclass
class _MarchProblem:
    """A reduced interior system solved by marching inward from the outer contour."""
    system: BatchedSystem
    jac: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]]
    first_guess: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]
    fallback: Callable[[np.ndarray], List[np.ndarray]]
    normalize: Callable[[np.ndarray], np.ndarray]
    is_interior: Callable[[np.ndarray], np.ndarray]
    is_trivial: Callable[[np.ndarray], np.ndarray]
    interior_greens: Callable[[np.ndarray, np.ndarray], np.ndarray]
    exterior_greens: Callable[[np.ndarray], np.ndarray]
    n_unknowns: int


def _attempt(problem: _MarchProblem, guess: np.ndarray, params: np.ndarray, opts: SolverOptions):
    res = batched_newton(problem.system, guess, params, problem.jac, opts)
    x = problem.normalize(res.x)
    interior = res.converged & problem.is_interior(x)
    trivial = res.converged & problem.is_trivial(x)
    return x, interior, trivial


def _march_inward(problem: _MarchProblem, r_out: np.ndarray, r_in: np.ndarray, r_target: np.ndarray,
                  phi: np.ndarray, opts: SolverOptions, steps: int = MARCH_STEPS) -> Tuple[np.ndarray, np.ndarray]:
    """
    Tracks the interior branch along each ray from the outer contour radius
    r_out down to r_target. A branch that collapses to v = 0, or is lost below
    the next contour radius r_in, marks the point exterior.

    Returns:
        (x, status): unknowns per point and FAILED / EXTERIOR / INTERIOR codes.
    """
    m = r_target.size
    x = np.zeros((m, problem.n_unknowns))
    status = np.full(m, EXTERIOR)
    with np.errstate(invalid='ignore'):
        live = np.flatnonzero(np.isfinite(r_out) & (r_target < r_out))
    status[live] = INTERIOR
    for k in range(1, steps + 1):
        live = live[status[live] == INTERIOR]
        if live.size == 0: break
        rk = r_out[live] - (k / steps) * (r_out[live] - r_target[live])
        params = np.column_stack([rk, phi[live]])
        guess = problem.first_guess(r_out[live], rk, phi[live]) if k == 1 else x[live]
        sol, ok, trivial = _attempt(problem, guess, params, opts)
        for alt in problem.fallback(guess):
            pending = np.flatnonzero(~ok)
            if pending.size == 0: break
            s2, ok2, triv2 = _attempt(problem, alt[pending], params[pending], opts)
            sol[pending[ok2]] = s2[ok2]
            ok[pending[ok2]] = True
            trivial[pending] |= triv2
        x[live[ok]] = sol[ok]
        lost = live[~ok]
        with np.errstate(invalid='ignore'):
            crossed = trivial[~ok] | (rk[~ok] < r_in[lost])
        status[lost[crossed]] = EXTERIOR
        status[lost[~crossed]] = FAILED
        if lost.size: logger.debug("March step %d: %d rays left the interior branch.", k, lost.size)
    x[status != INTERIOR] = 0.0
    return x, status


def _reduced_density(problem: _MarchProblem, zs: np.ndarray, r_out: np.ndarray, r_in: np.ndarray,
                     opts: SolverOptions) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Density at the points zs of a reduced problem: (values, valid, imag residue)."""
    r, phi = np.abs(zs), np.angle(zs)
    x, status = _march_inward(problem, r_out, r_in, r, phi, opts)
    valid = status != FAILED
    h = FD_RELATIVE_STEP * (1.0 + r)
    rows = np.flatnonzero(status == INTERIOR)
    stencil = []
    for offset in (1, -1, 1j, -1j):
        zp = zs + h * offset
        g = problem.exterior_greens(zp)
        if rows.size:
            params = np.column_stack([np.abs(zp[rows]), np.angle(zp[rows])])
            sol, ok, trivial = _attempt(problem, x[rows], params, opts)
            g[rows[ok]] = problem.interior_greens(zp[rows[ok]], sol[ok])
            # A stencil point just past the contour sits on the exterior branch.
            valid[rows[~(ok | trivial)]] = False
        stencil.append(g)
    d = 0.5 * ((stencil[0] - stencil[1]) / (2 * h) + 1j * (stencil[2] - stencil[3]) / (2 * h)) / math.pi
    d = np.where(valid, d, 0.0)
    return np.maximum(d.real, 0.0), valid, np.abs(d.imag)


# --- Shifted Ginibre Products (s + X1)(t + X2) ---

def shifted_ginibre_quartic(s: float, t: float, phi: float) -> np.ndarray:
    """Coefficients, highest power first, of the quartic whose positive roots are contour radii."""
    c = math.cos(phi)
    st = s * t
    return np.array([
        1.0,
        -4.0 * st * c,
        -1.0 - s * s - t * t + 2.0 * st * st + 4.0 * st * st * c * c,
        2.0 * s ** 3 * t * c + 2.0 * s * t ** 3 * c - 4.0 * st ** 3 * c,
        st * st - s ** 4 * t * t - s * s * t ** 4 + st ** 4,
    ])


def _real_positive_roots(coefficients: np.ndarray) -> List[float]:
    """Companion-matrix roots that are real and positive, polished by a few Newton steps."""
    derivative = np.polyder(coefficients)
    out = []
    for root in np.roots(coefficients):
        if abs(root.imag) > ROOT_IMAG_TOL * (1.0 + abs(root.real)): continue
        r = float(root.real)
        for _ in range(3):
            slope = np.polyval(derivative, r)
            if slope == 0: break
            r -= np.polyval(coefficients, r) / slope
        if r > ROOT_MIN: out.append(r)
    return sorted(out)


def _check_shifts(s: float, t: float):
    if not (math.isfinite(s) and math.isfinite(t)) or s < 0 or t < 0:
        raise ValueError(f"Shifts must be finite and nonnegative, got s={s}, t={t}.")


def shifted_ginibre_contour(s: float, t: float, phi: float) -> List[float]:
    """Sorted positive contour radii of (s + X1)(t + X2) along the ray of angle phi."""
    _check_shifts(s, t)
    return _real_positive_roots(shifted_ginibre_quartic(s, t, phi))


def shifted_ginibre_curve(s: float, t: float, phi_samples: int = 720) -> ContourCurve:
    """The full support boundary of (s + X1)(t + X2) as chained polylines."""
    _check_shifts(s, t)
    phis = np.linspace(0.0, 2.0 * math.pi, phi_samples, endpoint=False)
    roots, residual = [], 0.0
    for phi in phis:
        coefficients = shifted_ginibre_quartic(s, t, phi)
        rs = _real_positive_roots(coefficients)
        residual = max([residual] + [abs(float(np.polyval(coefficients, r))) for r in rs])
        roots.append(rs)
    return ContourCurve.from_samples(phis, roots, residual)


def _ginibre_system(s: float, t: float) -> Tuple[BatchedSystem, Callable]:
    def system(x: np.ndarray, params: np.ndarray) -> np.ndarray:
        va, vb = x[:, 0], x[:, 1]
        r, c = params[:, 0], np.cos(params[:, 1])
        f1 = va * (-1 + va ** 2 + s * s) * (vb ** 2 + t * t) + (-1 + 2 * va ** 2) * vb * r + va * r * r \
            - 2 * s * t * va * r * c
        f2 = vb * (-1 + vb ** 2 + t * t) * (va ** 2 + s * s) + (-1 + 2 * vb ** 2) * va * r + vb * r * r \
            - 2 * s * t * vb * r * c
        return np.column_stack([f1, f2])

    def jac(x: np.ndarray, params: np.ndarray) -> np.ndarray:
        va, vb = x[:, 0], x[:, 1]
        r, c = params[:, 0], np.cos(params[:, 1])
        j = np.empty((x.shape[0], 2, 2))
        j[:, 0, 0] = (-1 + 3 * va ** 2 + s * s) * (vb ** 2 + t * t) + 4 * va * vb * r + r * r - 2 * s * t * r * c
        j[:, 0, 1] = 2 * va * vb * (-1 + va ** 2 + s * s) + (-1 + 2 * va ** 2) * r
        j[:, 1, 0] = 2 * va * vb * (-1 + vb ** 2 + t * t) + (-1 + 2 * vb ** 2) * r
        j[:, 1, 1] = (-1 + 3 * vb ** 2 + t * t) * (va ** 2 + s * s) + 4 * va * vb * r + r * r - 2 * s * t * r * c
        return j

    return system, jac


def shifted_ginibre_residuals(s: float, t: float, z: complex, v_a: float, v_b: float) -> np.ndarray:
    """The two reduced interior equations of (s + X1)(t + X2) at z."""
    system, _ = _ginibre_system(s, t)
    return system(np.array([[v_a, v_b]], dtype=float), np.array([[abs(z), cmath.phase(z)]]))[0]


def _unit_conjugate(z: np.ndarray) -> np.ndarray:
    """e^{-i Arg z}, taken as 1 at z = 0."""
    r = np.abs(z)
    return np.where(r > 0, np.conj(z) / np.where(r > 0, r, 1.0), 1.0)


def _ginibre_greens_array(s: float, t: float, z: np.ndarray, va: np.ndarray, vb: np.ndarray) -> np.ndarray:
    r = np.abs(z)
    num = -(s * t - np.conj(z) - va * vb * _unit_conjugate(z))
    den = s * s * t * t + r * r + t * t * va ** 2 + s * s * vb ** 2 + 2 * r * va * vb + va ** 2 * vb ** 2 \
        - 2 * s * t * np.real(z)
    with np.errstate(divide='ignore', invalid='ignore'):
        return num / den


def shifted_ginibre_greens(s: float, t: float, z: complex, v_a: float, v_b: float) -> complex:
    """
    Closed-form G_AB of (s + X1)(t + X2). With v_a = v_b = 0 it is 1/(z - st).

    Raises:
        SingularQuaternionError: If the denominator vanishes.
    """
    g = complex(_ginibre_greens_array(s, t, np.array([complex(z)]), np.array([float(v_a)]),
                                      np.array([float(v_b)]))[0])
    if not cmath.isfinite(g): raise SingularQuaternionError(f"Green's function denominator vanishes at z={z}.")
    return g


def _contour_radii(roots: List[float]) -> Tuple[float, float]:
    """Outermost contour radius and the next one inside it (nan when absent)."""
    if not roots: return math.nan, math.nan
    return roots[-1], roots[-2] if len(roots) > 1 else math.nan


def _ginibre_problem(s: float, t: float) -> _MarchProblem:
    system, jac = _ginibre_system(s, t)

    def first_guess(r_out, rk, phi):
        # Linearization at v -> 0 fixes the ratio v_B / v_A.
        c = np.cos(phi)
        ratio = ((s * s - 1) * t * t + r_out ** 2 - 2 * s * t * r_out * c) / np.maximum(r_out, ROOT_MIN)
        va = np.sqrt(np.maximum(r_out - rk, 0.0))
        return np.column_stack([va, va * np.clip(np.abs(ratio), 0.1, 10.0)])

    def normalize(x):
        x = x.copy()
        both = (x[:, 0] < 0) & (x[:, 1] < 0)
        x[both] *= -1
        return x

    return _MarchProblem(
        system=system, jac=jac, first_guess=first_guess,
        fallback=lambda guess: [np.full_like(guess, v) for v in SEED_V],
        normalize=normalize,
        is_interior=lambda x: (x[:, 0] > V_MIN) & (x[:, 1] > V_MIN),
        is_trivial=lambda x: (np.abs(x[:, 0]) <= V_MIN) & (np.abs(x[:, 1]) <= V_MIN),
        interior_greens=lambda z, x: _ginibre_greens_array(s, t, z, x[:, 0], x[:, 1]),
        exterior_greens=lambda z: _ginibre_greens_array(s, t, z, np.zeros(z.shape), np.zeros(z.shape)),
        n_unknowns=2)


def _ginibre_radii(s: float, t: float, phi: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    pairs = [_contour_radii(_real_positive_roots(shifted_ginibre_quartic(s, t, a))) for a in phi]
    return np.array([p[0] for p in pairs]), np.array([p[1] for p in pairs])


def shifted_ginibre_interior(s: float, t: float, z: complex, seed: Optional[Tuple[float, float]] = None,
                             options: Optional[SolverOptions] = None) -> Tuple[float, float]:
    """
    Solves the reduced interior equations of (s + X1)(t + X2) for (v_A, v_B).

    Without a seed the solution is tracked inward from the outer contour along
    the ray through z; 8 log-spaced seeds are the fallback.

    Returns:
        (v_A, v_B): Both positive inside the support, (0, 0) outside.

    Raises:
        ValueError: If s * t = 0; that case is solved by `multiplication_law_solve`.
        NoConvergenceError: If no seed converges at a point inside the contour.
    """
    _check_shifts(s, t)
    if s * t == 0: raise ValueError("The reduced equations need s*t > 0; use multiplication_law_solve.")
    opts = options or DEFAULT_OPTIONS
    z = complex(z)
    problem = _ginibre_problem(s, t)
    params = np.array([[abs(z), cmath.phase(z)]])
    if seed is not None:
        x, ok, _ = _attempt(problem, np.array([seed], dtype=float), params, opts)
        if ok[0]: return float(x[0, 0]), float(x[0, 1])
    r_out, r_in = _ginibre_radii(s, t, params[:, 1])
    x, status = _march_inward(problem, r_out, r_in, params[:, 0], params[:, 1], opts)
    if status[0] == INTERIOR: return float(x[0, 0]), float(x[0, 1])
    if status[0] == EXTERIOR: return 0.0, 0.0
    best = math.inf
    for v in SEED_V:
        x, ok, _ = _attempt(problem, np.array([[v, v]]), params, opts)
        if ok[0]: return float(x[0, 0]), float(x[0, 1])
        best = min(best, float(np.linalg.norm(problem.system(x, params))))
    raise NoConvergenceError(f"Reduced interior equations did not converge at z={z}", best,
                             [f"seed v={v:.3g}" for v in SEED_V])


# --- Symmetric Shifted Elliptic Products (1 + E)(1 + E) ---

def _check_mu(mu: float):
    if not math.isfinite(mu) or abs(mu) >= 1:
        raise ValueError(f"The (1+E)(1+E) reduction needs |mu| < 1, got {mu}.")


def shifted_elliptic_exterior_w(mu: float, z: complex) -> complex:
    """
    Holomorphic w = G_A at z: the smallest root of
    mu^2 w^3 + 2 mu w^2 + (1 + mu - z) w + 1 = 0, which behaves like 1/z far out.
    """
    z = complex(z)
    if mu == 0:
        if z == 1: raise SingularQuaternionError("Exterior solution is singular at z = 1.")
        return 1.0 / (z - 1.0)
    roots = np.roots([mu * mu, 2 * mu, 1 + mu - z, 1.0])
    return complex(roots[np.argmin(np.abs(roots))])


def _elliptic_system(mu: float) -> BatchedSystem:
    def system(x: np.ndarray, params: np.ndarray) -> np.ndarray:
        w = x[:, 0] + 1j * x[:, 1]
        wb = np.conj(w)
        u = x[:, 2] ** 2
        r, e = params[:, 0], np.exp(1j * params[:, 1])
        eq1 = e * (w * r + (1 + w + wb * mu) * u) - (1 + w * mu) * (1 + w + w * w * mu - u)
        eq2 = e * (-1 + r + u - wb * (1 + wb * mu)) - (1 + w * mu) * (1 + w * mu + wb)
        return np.column_stack([eq1.real, eq1.imag, eq2.real, eq2.imag])

    return system


def shifted_elliptic_residuals(mu: float, z: complex, w: complex, v: float) -> np.ndarray:
    """The two complex interior equations of (1 + E)(1 + E), split into 4 reals."""
    w = complex(w)
    return _elliptic_system(mu)(np.array([[w.real, w.imag, float(v)]]), np.array([[abs(z), cmath.phase(z)]]))[0]


def _elliptic_greens_array(mu: float, z: np.ndarray, w: np.ndarray, v: np.ndarray) -> np.ndarray:
    r = np.abs(z)
    e = np.conj(_unit_conjugate(z))
    u = v ** 2
    a = 1 + w * mu
    ab = 1 + np.conj(w) * mu
    num = e * ab ** 2 - r - u
    den = (r - e * ab ** 2) * (a ** 2 - r * e) - u * e * (2 * (r + np.abs(a) ** 2) + u)
    with np.errstate(divide='ignore', invalid='ignore'):
        return num / den


def shifted_elliptic_greens(mu: float, z: complex, w: complex, v: float) -> complex:
    """
    Closed-form G_AB of (1 + E)(1 + E) from the symmetric solution (w, v).
    With v = 0 it is 1/(z - (1 + mu w)^2).
    """
    g = complex(_elliptic_greens_array(mu, np.array([complex(z)]), np.array([complex(w)]),
                                       np.array([float(v)]))[0])
    if not cmath.isfinite(g): raise SingularQuaternionError(f"Green's function denominator vanishes at z={z}.")
    return g


def shifted_elliptic_boundary_residual(mu: float, phi: float, w: complex, r: float) -> np.ndarray:
    """Residuals of the v -> 0 matching equations at the contour point r e^{i phi}."""
    e = cmath.exp(1j * phi)
    wb = w.conjugate()
    b1 = r * e * w - (1 + w * mu) * (1 + w + w * w * mu)
    b2 = e * (-1 + r - wb * (1 + wb * mu)) - (1 + w * mu) * (1 + w * mu + wb)
    return np.array([b1.real, b1.imag, b2.real, b2.imag])


def _elliptic_boundary_seeds(mu: float) -> List[Tuple[float, float]]:
    """Real contour solutions (w, r) on the positive axis."""
    a, b, c = [mu, 1.0], [mu, 1.0, 1.0], [1.0 + mu, 1.0]
    poly = np.polysub(np.polysub(np.polymul(a, b), [1.0, 0.0]),
                      np.polyadd(np.polymul([1.0, 0.0, 0.0], a), np.polymul([1.0, 0.0], np.polymul(a, c))))
    seeds = []
    for root in np.roots(poly):
        if abs(root.imag) > ROOT_IMAG_TOL or abs(root.real) < ROOT_MIN: continue
        w = float(root.real)
        r = (1 + w * mu) * (1 + w + w * w * mu) / w
        if r > ROOT_MIN: seeds.append((w, r))
    return seeds


def _boundary_step(mu: float, phi_from: float, phi_to: float, state: np.ndarray,
                   opts: SolverOptions, depth: int = 0) -> Optional[np.ndarray]:
    res = newton_solve(lambda x: shifted_elliptic_boundary_residual(mu, phi_to, complex(x[0], x[1]), x[2]),
                       state, options=opts)
    if res.success: return res.x
    if depth >= 4: return None
    middle = 0.5 * (phi_from + phi_to)
    half = _boundary_step(mu, phi_from, middle, state, opts, depth + 1)
    return None if half is None else _boundary_step(mu, middle, phi_to, half, opts, depth + 1)


def _elliptic_boundary_branches(mu: float, phis: np.ndarray, opts: SolverOptions) -> Tuple[List[List[float]], float]:
    """Continues every axis solution over the ascending angles `phis` (starting at 0)."""
    roots: List[List[float]] = [[] for _ in phis]
    residual = 0.0
    for w0, r0 in _elliptic_boundary_seeds(mu):
        state, previous = np.array([w0, 0.0, r0]), 0.0
        for n, phi in enumerate(phis):
            found = _boundary_step(mu, previous, float(phi), state, opts)
            if found is None:
                logger.warning("Contour branch starting at r=%.6g lost at phi=%.6g (last good phi=%.6g).",
                               r0, phi, previous)
                break
            state, previous = found, float(phi)
            # The branch ends where it reaches the origin.
            if state[2] <= ROOT_MIN: break
            roots[n].append(float(state[2]))
            res = shifted_elliptic_boundary_residual(mu, phi, complex(state[0], state[1]), state[2])
            residual = max(residual, float(np.linalg.norm(res)))
    return roots, residual


def shifted_elliptic_contour(mu: float, phi: float, options: Optional[SolverOptions] = None) -> List[float]:
    """
    Contour radii of (1 + E)(1 + E) along the ray of angle phi, continued from
    the positive axis. The contour is symmetric under phi -> -phi.
    """
    _check_mu(mu)
    target = abs(wrap_angle(phi))
    n = max(2, int(math.ceil(target / BOUNDARY_STEP)) + 1)
    roots, _ = _elliptic_boundary_branches(mu, np.linspace(0.0, target, n), options or DEFAULT_OPTIONS)
    return sorted(roots[-1])


def _elliptic_half_circle(mu: float, phi_samples: int, opts: SolverOptions):
    half = phi_samples // 2
    phis = np.linspace(0.0, math.pi, half + 1)
    roots, residual = _elliptic_boundary_branches(mu, phis, opts)
    return phis, roots, residual


def shifted_elliptic_curve(mu: float, phi_samples: int = 720, options: Optional[SolverOptions] = None) -> ContourCurve:
    """The support boundary of (1 + E)(1 + E), mirrored from the upper half plane."""
    _check_mu(mu)
    phi_samples += phi_samples % 2
    _, half_roots, residual = _elliptic_half_circle(mu, phi_samples, options or DEFAULT_OPTIONS)
    phis = np.linspace(0.0, 2.0 * math.pi, phi_samples, endpoint=False)
    roots = [half_roots[k] if k <= phi_samples // 2 else half_roots[phi_samples - k] for k in range(phi_samples)]
    return ContourCurve.from_samples(phis, roots, residual)


def _elliptic_problem(mu: float) -> _MarchProblem:
    def first_guess(r_out, rk, phi):
        w = np.array([shifted_elliptic_exterior_w(mu, r * cmath.exp(1j * a)) for r, a in zip(r_out, phi)])
        return np.column_stack([w.real, w.imag, np.sqrt(np.maximum(r_out - rk, 0.0))])

    def fallback(guess):
        out = []
        for v in SEED_V:
            alt = guess.copy()
            alt[:, 2] = v
            out.append(alt)
        return out

    def normalize(x):
        x = x.copy()
        x[:, 2] = np.abs(x[:, 2])
        return x

    def exterior_greens(z):
        w = np.array([shifted_elliptic_exterior_w(mu, zk) for zk in z])
        with np.errstate(divide='ignore', invalid='ignore'):
            return 1.0 / (z - (1 + mu * w) ** 2)

    return _MarchProblem(
        system=_elliptic_system(mu), jac=None, first_guess=first_guess, fallback=fallback,
        normalize=normalize,
        is_interior=lambda x: x[:, 2] > V_MIN,
        is_trivial=lambda x: x[:, 2] <= V_MIN,
        interior_greens=lambda z, x: _elliptic_greens_array(mu, z, x[:, 0] + 1j * x[:, 1], x[:, 2]),
        exterior_greens=exterior_greens,
        n_unknowns=3)


def shifted_elliptic_interior(mu: float, z: complex, seed: Optional[Tuple[complex, float]] = None,
                              options: Optional[SolverOptions] = None) -> Tuple[complex, float]:
    """
    Solves the symmetric interior equations of (1 + E)(1 + E) for (w, v).

    Returns:
        (w, v): v > 0 inside the support; outside, the holomorphic w with v = 0.

    Raises:
        NoConvergenceError: If no seed converges at a point inside the contour.
    """
    _check_mu(mu)
    opts = options or DEFAULT_OPTIONS
    z = complex(z)
    problem = _elliptic_problem(mu)
    params = np.array([[abs(z), cmath.phase(z)]])
    if seed is not None:
        w0 = complex(seed[0])
        x, ok, _ = _attempt(problem, np.array([[w0.real, w0.imag, float(seed[1])]]), params, opts)
        if ok[0]: return complex(x[0, 0], x[0, 1]), float(x[0, 2])
    roots = shifted_elliptic_contour(mu, params[0, 1], opts)
    r_out, r_in = _contour_radii(roots)
    x, status = _march_inward(problem, np.array([r_out]), np.array([r_in]), params[:, 0], params[:, 1], opts)
    if status[0] == INTERIOR: return complex(x[0, 0], x[0, 1]), float(x[0, 2])
    if status[0] == EXTERIOR: return shifted_elliptic_exterior_w(mu, z), 0.0
    w_ext = shifted_elliptic_exterior_w(mu, z)
    best = math.inf
    for v in SEED_V:
        x, ok, _ = _attempt(problem, np.array([[w_ext.real, w_ext.imag, v]]), params, opts)
        if ok[0]: return complex(x[0, 0], x[0, 1]), float(x[0, 2])
        best = min(best, float(np.linalg.norm(problem.system(x, params))))
    raise NoConvergenceError(f"(1+E)(1+E) interior equations did not converge at z={z}", best,
                             [f"seed v={v:.3g}" for v in SEED_V])


# --- Shifted GUE Times Shifted Ginibre (1 + H)(1 + X) ---

def gue_ginibre_boundary(phi: float) -> List[Tuple[complex, complex, float]]:
    """
    Contour solutions (w_B, w_A, r) of (1 + H)(1 + X) at angle phi, sorted by r.

    w_B = lambda e^{-2i phi} with lambda real solving
    (1 + 2 cos 2phi) lambda^2 + lambda - 1 = 0, written as 2/(1 +- sqrt(disc))
    so the root through lambda = 1 stays accurate where the leading
    coefficient vanishes. Only |w_B| <= 1, the root that continues to the
    exterior solution, is kept.
    """
    disc = 5.0 + 8.0 * math.cos(2.0 * phi)
    if disc < 0: return []
    root = math.sqrt(disc)
    lams = [2.0 / (1.0 + root)] + ([2.0 / (1.0 - root)] if root != 1.0 else [])
    out = []
    for lam in lams:
        if abs(lam) > 1.0: continue
        r = math.cos(phi) / lam + math.cos(phi) + lam * math.cos(3.0 * phi)
        if r <= ROOT_MIN: continue
        wb = lam * cmath.exp(-2j * phi)
        out.append((wb, wb * (1 + wb), r))
    return sorted(out, key=lambda s: s[2])


def gue_ginibre_residual(phi: float, w_b: complex, w_a: complex, r: float) -> float:
    """Largest residual of the three contour equations of (1 + H)(1 + X)."""
    e = cmath.exp(1j * phi)
    r_eq = abs(r - (1 + w_b + w_b * w_b) / (e * w_b))
    a_eq = abs(w_a - w_b * (1 + w_b))
    b_eq = abs(-1 + abs(w_b) ** 2 + w_b * e * e * (1 + w_b + w_b.conjugate()))
    return max(r_eq, a_eq, b_eq)


def gue_ginibre_contour(phi: float) -> List[float]:
    """Sorted contour radii of (1 + H)(1 + X) along the ray of angle phi."""
    return [r for _, _, r in gue_ginibre_boundary(phi)]


def _branch_end(phi_in: float, phi_out: float, count: int) -> float:
    """Bisects toward the angle where the solution count drops below `count`; stays on the phi_in side."""
    for _ in range(BISECTION_STEPS):
        mid = 0.5 * (phi_in + phi_out)
        if len(gue_ginibre_boundary(mid)) >= count: phi_in = mid
        else: phi_out = mid
    return phi_in


def gue_ginibre_curve(phi_samples: int = 720) -> ContourCurve:
    """
    Both closed branches of the (1 + H)(1 + X) contour. Each branch shrinks to
    the origin at the angle where its lambda reaches +-1, so an extra sample is
    bisected into every gap where the solution count changes.
    """
    phis = list(np.linspace(0.0, 2.0 * math.pi, phi_samples, endpoint=False))
    counts = [len(gue_ginibre_boundary(phi)) for phi in phis]
    refined = []
    for k in range(len(phis) - 1):
        a, b = phis[k], phis[k + 1]
        if counts[k] > counts[k + 1]: refined.append(_branch_end(a, b, counts[k]))
        elif counts[k] < counts[k + 1]: refined.append(_branch_end(b, a, counts[k + 1]))
    phis = sorted(phis + refined)
    roots, residual = [], 0.0
    for phi in phis:
        sols = gue_ginibre_boundary(phi)
        residual = max([residual] + [gue_ginibre_residual(phi, *s) for s in sols])
        roots.append([s[2] for s in sols])
    return ContourCurve.from_samples(phis, roots, residual)


# --- Dispatch ---

@dataclass(frozen=True)
class GinibreReduction:
    """(a + b X1)(c + d X2) = u (s + X1)(t + X2) for Ginibre-type factors."""
    s: float
    t: float
    u: complex


def ginibre_reduction(p: ProductLaw) -> Optional[GinibreReduction]:
    """The reduction when both factors are shifted, scaled Ginibre laws, else None."""
    a, b = p.factor_a, p.factor_b
    if a.mu != 0 or b.mu != 0 or a.sigma <= 0 or b.sigma <= 0: return None
    u = a.sigma * b.sigma * cmath.exp(1j * (cmath.phase(a.x) + cmath.phase(b.x)))
    return GinibreReduction(abs(a.x) / a.sigma, abs(b.x) / b.sigma, u)


def _is_unit_shift(law: EllipticLaw) -> bool:
    return law.x == 1 and law.sigma == 1 and law.phi == 0


def shifted_elliptic_mu(p: ProductLaw) -> Optional[float]:
    """mu when AB = (1 + E(mu))(1 + E(mu)) with 0 < |mu| < 1, else None."""
    a, b = p.factor_a, p.factor_b
    if a == b and _is_unit_shift(a) and 0 < abs(a.mu) < 1: return a.mu
    return None


def is_gue_ginibre(p: ProductLaw) -> bool:
    """True for (1 + H)(1 + X) in either order."""
    def gue(law): return _is_unit_shift(law) and law.mu == 1
    def ginibre(law): return law.x == 1 and law.sigma == 1 and law.mu == 0
    a, b = p.factor_a, p.factor_b
    return (gue(a) and ginibre(b)) or (gue(b) and ginibre(a))


def _scaled_curve(curve: ContourCurve, u: complex) -> ContourCurve:
    if u == 1: return curve
    return ContourCurve.from_points([curve.points(k) * u for k in range(curve.branch_count)], curve.residual)


def product_contour(p: ProductLaw, phi_samples: int = 720, options: Optional[SolverOptions] = None) -> ContourCurve:
    """
    Support boundary of AB for the product families with a contour equation.

    Raises:
        UnsupportedSpecError: For other factor pairs.
    """
    reduction = ginibre_reduction(p)
    if reduction is not None:
        return _scaled_curve(shifted_ginibre_curve(reduction.s, reduction.t, phi_samples), reduction.u)
    mu = shifted_elliptic_mu(p)
    if mu is not None: return shifted_elliptic_curve(mu, phi_samples, options)
    if is_gue_ginibre(p): return gue_ginibre_curve(phi_samples)
    raise UnsupportedSpecError(f"No contour equation is available for the product of {p.factor_a} and {p.factor_b}.")


def _ginibre_density_row(reduction: GinibreReduction, grid: GridSpec, j: int, opts: SolverOptions):
    zs = (grid.x_centers + 1j * grid.y_centers[j]) / reduction.u
    r_out, r_in = _ginibre_radii(reduction.s, reduction.t, np.angle(zs))
    values, valid, imag = _reduced_density(_ginibre_problem(reduction.s, reduction.t), zs, r_out, r_in, opts)
    scale = abs(reduction.u) ** 2
    return values / scale, valid, imag / scale


def _elliptic_density_row(mu: float, phis: np.ndarray, outer: np.ndarray, grid: GridSpec, j: int,
                          opts: SolverOptions):
    zs = grid.x_centers + 1j * grid.y_centers[j]
    r_out = np.interp(np.abs(np.angle(zs)), phis, outer)
    return _reduced_density(_elliptic_problem(mu), zs, r_out, np.full(zs.size, math.nan), opts)


def product_density_field(p: ProductLaw, grid: GridSpec, options: Optional[SolverOptions] = None,
                          max_workers: Optional[int] = None) -> DensityGrid:
    """
    Density of AB on the grid. Ginibre-type products with s*t > 0 and
    (1 + E)(1 + E) use the reduced equations marched inward from the contour;
    every other pair uses the generic multiplication law. Rows are independent
    tasks, so the result does not depend on the number of workers.
    """
    if grid.nx < 8 or grid.ny < 8: raise ValueError(f"Density grids need at least 8x8 cells, got {grid.nx}x{grid.ny}.")
    opts = options or DEFAULT_OPTIONS
    reduction = ginibre_reduction(p)
    mu = shifted_elliptic_mu(p)
    if reduction is not None and reduction.s * reduction.t > 0:
        def row(j): return _ginibre_density_row(reduction, grid, j, opts)
    elif mu is not None:
        phis, roots, _ = _elliptic_half_circle(mu, 720, opts)
        outer = np.array([max(r) if r else math.nan for r in roots])

        def row(j): return _elliptic_density_row(mu, phis, outer, grid, j, opts)
    else:
        def row(j): return _generic_density_row(p, grid, j, opts)
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        rows = list(pool.map(row, range(grid.ny)))
    result = assemble_density(grid, rows)
    report_density(result)
    return result

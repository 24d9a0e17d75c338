"""
qf_greens.py

This module solves the quaternionic fixed-point equation
G = (q - R(G))^-1 for a law's Green's function and turns the solutions into
density fields through rho = (1/pi) dG/dz-bar. It also hosts the
delta-representation kernels, the localization check on H_L, the empirical
block-resolvent average and the support contour of a single elliptic law.

At w = 0 the second component Gamma is solved as a real nonnegative unknown:
Gamma = 0 is the holomorphic exterior branch, Gamma > 0 the interior one.
"""

import cmath
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import integrate, linalg

from qf_errors import NoConvergenceError, QFreeError, SingularQuaternionError
from qf_laws import EllipticLaw
from qf_model import ContourCurve, DensityGrid, GridSpec, Regime
from qf_newton import DEFAULT_OPTIONS, SolverOptions, newton_solve
from qf_quaternion import ONE, Quaternion, block_resolvent

logger = logging.getLogger(__name__)

# --- Type Aliases for Clarity ---
LawEvaluator = Union[EllipticLaw, Callable[[Quaternion], Quaternion]]

INTERIOR_GAMMA_MIN = 1e-7
GAMMA_SEEDS = (1.0, 0.5, 0.2, 2.0, 0.05)
FD_RELATIVE_STEP = 1e-4


@dataclass(frozen=True)
class GreensResult:
    """A converged quaternionic Green's function value at one point."""
    value: Quaternion
    regime: Regime
    residual: float
    iterations: int

    @property
    def greens(self) -> complex:
        return self.value.first

    @property
    def gamma(self) -> complex:
        return self.value.second


def _transform_of(law: LawEvaluator) -> Callable[[Quaternion], Quaternion]:
    return law.r_transform if isinstance(law, EllipticLaw) else law


def fixed_point_residual(r: Callable[[Quaternion], Quaternion], q: Quaternion, g: Quaternion) -> float:
    """Norm of G (q - R(G)) - 1."""
    return math.sqrt((g * (q - r(g)) - ONE).norm2())


def _residual_vector(r, q: Quaternion, g: Quaternion) -> np.ndarray:
    e = g * (q - r(g)) - ONE
    return np.array([e.first.real, e.first.imag, e.second.real, e.second.imag])


def _solve_exterior(r, q: Quaternion, seed: complex, opts: SolverOptions):
    func = lambda x: _residual_vector(r, q, Quaternion(complex(x[0], x[1]), 0))
    return newton_solve(func, [seed.real, seed.imag], options=opts)


def _solve_interior(r, q: Quaternion, seed_g: complex, seed_gamma: float, opts: SolverOptions):
    func = lambda x: _residual_vector(r, q, Quaternion(complex(x[0], x[1]), x[2]))
    return newton_solve(func, [seed_g.real, seed_g.imag, seed_gamma], options=opts)


def _solve_full(r, q: Quaternion, seed: Quaternion, opts: SolverOptions):
    func = lambda x: _residual_vector(r, q, Quaternion(complex(x[0], x[1]), complex(x[2], x[3])))
    return newton_solve(func, [seed.first.real, seed.first.imag, seed.second.real, seed.second.imag], options=opts)


def _exterior_by_continuation(r, z: complex, opts: SolverOptions) -> complex:
    """Tracks the holomorphic branch from far out (G ~ 1/(z - c)) to z."""
    center = r(Quaternion(0, 0)).first
    spread = abs(r(Quaternion(1, 0)).first - center) + math.sqrt(abs(r(Quaternion(0, 1)).second))
    direction = z - center if abs(z - center) > 1e-9 else 1.0 + 0j
    far = 16.0 * (1.0 + abs(center) + spread)
    lam = max(1.0, far / abs(direction))
    g = 1.0 / (direction * lam)
    while True:
        zk = center + direction * lam
        res = _solve_exterior(r, Quaternion(zk, 0), g, opts)
        if not res.success:
            raise NoConvergenceError(f"Exterior continuation failed at z={zk}", res.residual)
        g = complex(res.x[0], res.x[1])
        if lam == 1.0: return g
        lam = max(1.0, lam / 2.0)


def _interior_from(r, q: Quaternion, seeds: Sequence[Tuple[complex, float]], opts: SolverOptions,
                   trace: List[str]) -> Tuple[Optional[GreensResult], float]:
    best = math.inf
    for g_seed, gamma_seed in seeds:
        res = _solve_interior(r, q, g_seed, gamma_seed, opts)
        best = min(best, res.residual)
        if res.success and abs(res.x[2]) > INTERIOR_GAMMA_MIN:
            value = Quaternion(complex(res.x[0], res.x[1]), abs(res.x[2]))
            return GreensResult(value, Regime.INTERIOR, fixed_point_residual(r, q, value), res.iterations), best
        trace.append(f"interior seed ({g_seed:.3g}, {gamma_seed:.3g}): {res.message}")
    return None, best


def _solve_projected(r, z: complex, seed: Optional[Quaternion], closed_form: Optional[Tuple[complex, float]],
                     opts: SolverOptions) -> GreensResult:
    q = Quaternion(z, 0)
    trace: List[str] = []

    # Warm interior candidates first: the neighbour's state and the closed form.
    warm: List[Tuple[complex, float]] = []
    if seed is not None and abs(seed.second) > INTERIOR_GAMMA_MIN: warm.append((seed.first, abs(seed.second)))
    if closed_form is not None and closed_form[1] > 0: warm.append(closed_form)
    found, best = _interior_from(r, q, warm, opts, trace)
    if found is not None: return found

    exterior = None
    ext_seeds = []
    if seed is not None: ext_seeds.append(seed.first)
    if closed_form is not None: ext_seeds.append(closed_form[0])
    for s in ext_seeds:
        res = _solve_exterior(r, q, s, opts)
        if res.success:
            exterior = res
            break
        best = min(best, res.residual)
    if exterior is None:
        try:
            g = _exterior_by_continuation(r, z, opts)
            exterior = _solve_exterior(r, q, g, opts)
        except NoConvergenceError as exc:
            trace.append(str(exc))
            best = min(best, exc.residual)

    # A closed form that reports the exterior is trusted; otherwise search for an interior branch.
    if closed_form is None:
        base = complex(exterior.x[0], exterior.x[1]) if exterior is not None else (1.0 / z if z != 0 else 0j)
        starts = [(base, g0) for g0 in GAMMA_SEEDS] + [(base.conjugate(), g0) for g0 in GAMMA_SEEDS[:2]]
        found, search_best = _interior_from(r, q, starts, opts, trace)
        if found is not None: return found
        best = min(best, search_best)

    if exterior is not None and exterior.success:
        value = Quaternion(complex(exterior.x[0], exterior.x[1]), 0)
        return GreensResult(value, Regime.EXTERIOR, fixed_point_residual(r, q, value), exterior.iterations)
    raise NoConvergenceError(f"No branch converged at z={z}", best, trace)


def solve_quaternionic_greens(law: LawEvaluator, q: Quaternion, seed: Optional[Quaternion] = None,
                              options: Optional[SolverOptions] = None) -> GreensResult:
    """
    Solves G = (q - R(G))^-1.

    Args:
        law: An EllipticLaw or any callable quaternionic R transform.
        q (Quaternion): The point (z, w).
        seed (Quaternion, optional): Warm start, typically a neighbouring solution.
        options: Solver tolerances.

    Returns:
        GreensResult: At w = 0 the interior branch (Gamma > 0) is preferred when it
        converges; Gamma is reported real and nonnegative. For w != 0 the regime is
        that of the projected solution at the same z.
    """
    opts = options or DEFAULT_OPTIONS
    r = _transform_of(law)
    closed_form = None
    if isinstance(law, EllipticLaw):
        try:
            closed_form = law.projected_greens(q.first)
        except SingularQuaternionError:
            closed_form = None
    if q.second == 0:
        return _solve_projected(r, q.first, seed, closed_form, opts)

    base = _solve_projected(r, q.first, None, closed_form, opts)
    phase = q.second / abs(q.second)
    if base.regime is Regime.INTERIOR:
        start = Quaternion(base.value.first, -phase * base.value.second)
    else:
        start = Quaternion(base.value.first, -q.second * abs(base.value.first) ** 2)
    if seed is not None and seed.second != 0: start = seed
    res = _solve_full(r, q, start, opts)
    if not res.success:
        # Continuation in |w| from a tiny value up to the target.
        state = start
        for k in range(12, -1, -1):
            qk = Quaternion(q.first, q.second * 2.0 ** (-k))
            res = _solve_full(r, qk, state, opts)
            if not res.success: raise NoConvergenceError(f"No branch converged at q={q}", res.residual, [f"|w| step {k}"])
            state = Quaternion(complex(res.x[0], res.x[1]), complex(res.x[2], res.x[3]))
    value = Quaternion(complex(res.x[0], res.x[1]), complex(res.x[2], res.x[3]))
    return GreensResult(value, base.regime, fixed_point_residual(r, q, value), res.iterations)


# --- Density Fields ---

def dzbar_of_greens(solve: Callable[[complex, Optional[object]], Tuple[complex, object]], z: complex,
                    center_state: object) -> complex:
    """
    Central 4-point stencil for dG/dz-bar = (1/2)(d/dx + i d/dy), each stencil
    point re-solved from the center state.
    """
    h = FD_RELATIVE_STEP * (1.0 + abs(z))
    gxp, _ = solve(z + h, center_state)
    gxm, _ = solve(z - h, center_state)
    gyp, _ = solve(z + 1j * h, center_state)
    gym, _ = solve(z - 1j * h, center_state)
    return 0.5 * ((gxp - gxm) / (2 * h) + 1j * (gyp - gym) / (2 * h))


def _density_row(law: LawEvaluator, grid: GridSpec, j: int, opts: SolverOptions):
    nx = grid.nx
    values, valid, imag = np.zeros(nx), np.zeros(nx, dtype=bool), np.zeros(nx)
    y = grid.y_centers[j]
    previous: Optional[Quaternion] = None

    def solve(z: complex, state: Optional[Quaternion]):
        try:
            out = solve_quaternionic_greens(law, Quaternion(z, 0), seed=state, options=opts)
        except NoConvergenceError:
            out = solve_quaternionic_greens(law, Quaternion(z, 0), options=opts)
        return out.greens, out.value

    for i, x in enumerate(grid.x_centers):
        z = complex(x, y)
        try:
            _, center = solve(z, previous)
            d = dzbar_of_greens(solve, z, center) / math.pi
        except QFreeError as exc:
            logger.debug("Cell (%d, %d) at z=%s failed: %s", i, j, z, exc)
            previous = None
            continue
        previous = center
        values[i], imag[i], valid[i] = max(d.real, 0.0), abs(d.imag), True
    return values, valid, imag


def density_field(law: LawEvaluator, grid: GridSpec, options: Optional[SolverOptions] = None,
                  max_workers: Optional[int] = None) -> DensityGrid:
    """
    Samples rho(z) = (1/pi) dG/dz-bar at every cell center. Rows are independent
    tasks; warm starts run along a row only, so the result does not depend on
    the number of workers.
    """
    if grid.nx < 8 or grid.ny < 8: raise ValueError(f"Density grids need at least 8x8 cells, got {grid.nx}x{grid.ny}.")
    opts = options or DEFAULT_OPTIONS
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        rows = list(pool.map(lambda j: _density_row(law, grid, j, opts), range(grid.ny)))
    result = assemble_density(grid, rows)
    report_density(result)
    return result


def assemble_density(grid: GridSpec, rows: Sequence[Tuple[np.ndarray, np.ndarray, np.ndarray]]) -> DensityGrid:
    """Stacks per-row (values, valid, imag) columns into a DensityGrid."""
    values = np.column_stack([r[0] for r in rows])
    valid = np.column_stack([r[1] for r in rows])
    imag = np.column_stack([r[2] for r in rows])
    return DensityGrid(grid, values, valid, imag)


def report_density(result: DensityGrid):
    if result.invalid_count:
        logger.warning("%d of %d density cells failed to converge and are marked invalid.",
                       result.invalid_count, result.values.size)
    noisy = int(np.count_nonzero(result.imag_residue[result.valid] > 1e-6))
    if noisy:
        logger.warning("%d density cells have an imaginary residue above 1e-6.", noisy)


# --- Delta Representation ---

def delta_representation(z: complex, w: complex, part: str = 'first') -> complex:
    """
    Regularized delta kernels from the inverse quaternion: the first part is
    (1/pi)|w|^2/(|z|^2+|w|^2)^2, the second part is (w/conj(w)) times it.
    """
    z, w = complex(z), complex(w)
    if part not in ('first', 'second'): raise ValueError(f"Kernel part must be 'first' or 'second', got '{part}'.")
    if w == 0:
        if z != 0: return 0j
        raise SingularQuaternionError("Delta kernel is singular at z = 0 when w = 0.")
    first = abs(w) ** 2 / (math.pi * (abs(z) ** 2 + abs(w) ** 2) ** 2)
    if part == 'first': return complex(first)
    return (w / w.conjugate()) * first


def delta_mass(w: complex, radius: float) -> float:
    """Integral of the first-part kernel over the disk |z| <= radius."""
    w2 = abs(complex(w)) ** 2
    if w2 == 0: raise SingularQuaternionError("Delta kernel mass needs w != 0.")
    value, _ = integrate.quad(lambda r: 2.0 * r * w2 / (r * r + w2) ** 2, 0.0, radius, limit=200,
                              points=[math.sqrt(w2)] if math.sqrt(w2) < radius else None)
    return float(value)


def delta_tail(w: complex, radius: float) -> float:
    """Analytic mass outside |z| <= radius: |w|^2/(R^2+|w|^2)."""
    w2 = abs(complex(w)) ** 2
    return w2 / (radius ** 2 + w2)


# --- Localization ---

@dataclass(frozen=True)
class LocalizationReport:
    """Smallest eigenvalue of H_L at an eigenvalue of X; contract: equals |w|^2."""
    eigenvalue: complex
    w: complex
    min_eig_hl: float

    @property
    def deviation(self) -> float:
        return abs(self.min_eig_hl - abs(self.w) ** 2)


def localization_check(x: np.ndarray, eigenvalue: complex, w: complex) -> LocalizationReport:
    """Builds H_L = (lambda - X)(lambda - X)^H + |w|^2 and returns its smallest eigenvalue."""
    x = np.asarray(x, dtype=complex)
    n = x.shape[0]
    a = complex(eigenvalue) * np.eye(n) - x
    h_left = a @ a.conj().T + abs(complex(w)) ** 2 * np.eye(n)
    smallest = linalg.eigvalsh(h_left, subset_by_index=[0, 0])
    return LocalizationReport(complex(eigenvalue), complex(w), float(smallest[0]))


# --- Empirical Green's Function and Elliptic Contour ---

def empirical_greens(matrices: Sequence[np.ndarray], q: Quaternion) -> Quaternion:
    """Average of block_resolvent over a batch of sample matrices."""
    if not matrices: raise ValueError("Empirical Green's function needs at least one matrix.")
    total = Quaternion(0, 0)
    for x in matrices:
        total = total + block_resolvent(x, q)
    return Quaternion(total.first / len(matrices), total.second / len(matrices))


def elliptic_contour(law: EllipticLaw, samples: int = 720) -> ContourCurve:
    """Support ellipse of a single elliptic law as a one-branch contour."""
    if law.is_deterministic: return ContourCurve([])
    z = law.support_boundary(samples)
    return ContourCurve.from_points([np.append(z, z[0])])

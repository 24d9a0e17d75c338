"""
qf_laws.py

This module provides the closed-form transform algebra:

1.  **Elliptic laws**: the gaussian family parametrized by (x, sigma, mu, phi),
    their quaternionic R transforms, first and second cumulant matrices,
    the addition law (cumulant matrices add) and the scaling/shift law.
2.  **Scalar series**: moment and free-cumulant sequences with the mutually
    inverse conversions obtained by order-matching G = 1/(z - R(G)).
3.  **Hermitian transforms**: R and S transforms as evaluators, the resolvent
    solver, R/S conversion and the hermitian multiplication law.

Like the transformation rules elsewhere in the package, every operation
returns a new immutable value.
"""

import cmath
import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
from numpy.polynomial import Polynomial

from qf_errors import DegenerateScaleError, NoConvergenceError, SingularQuaternionError, UndefinedTransformError
from qf_newton import DEFAULT_OPTIONS, SolverOptions, newton_complex, newton_solve
from qf_quaternion import Quaternion

logger = logging.getLogger(__name__)

# --- Type Aliases for Clarity ---
QuaternionTransform = Callable[[Quaternion], Quaternion]

DEFAULT_SERIES_ORDER = 16
LINE_MU_TOL = 1e-12
CONTINUATION_STEPS = 16


def wrap_angle(phi: float) -> float:
    """Maps an angle to [-pi, pi); angles already in range are returned unchanged."""
    if -math.pi <= phi < math.pi: return phi
    return (phi + math.pi) % (2 * math.pi) - math.pi


# --- Elliptic Laws ---

@dataclass(frozen=True)
class EllipticLaw:
    """
    Gaussian elliptic law X = x + e^{i phi}(sigma_1 H_1 + i sigma_2 H_2).

    Args:
        x (complex): Center (first cumulant).
        sigma (float): Scale; sigma = 0 encodes a deterministic shift.
        mu (float): Eccentricity in [-1, 1]; 0 is Ginibre, 1 is GUE.
        phi (float): Rotation angle, stored in [-pi, pi).
    """
    x: complex = 0j
    sigma: float = 1.0
    mu: float = 0.0
    phi: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, 'x', complex(self.x))
        object.__setattr__(self, 'sigma', float(self.sigma))
        object.__setattr__(self, 'mu', float(self.mu))
        object.__setattr__(self, 'phi', wrap_angle(float(self.phi)))
        if not (cmath.isfinite(self.x) and math.isfinite(self.sigma) and math.isfinite(self.mu)):
            raise ValueError("Elliptic law parameters must be finite.")
        if self.sigma < 0: raise ValueError(f"Elliptic law scale must be nonnegative, got {self.sigma}.")
        if abs(self.mu) > 1.0 + 1e-12: raise ValueError(f"Elliptic law eccentricity must lie in [-1, 1], got {self.mu}.")
        if abs(self.mu) > 1.0: object.__setattr__(self, 'mu', math.copysign(1.0, self.mu))

    @classmethod
    def gue(cls) -> 'EllipticLaw':
        return cls(0j, 1.0, 1.0, 0.0)

    @classmethod
    def ginibre(cls) -> 'EllipticLaw':
        return cls(0j, 1.0, 0.0, 0.0)

    @classmethod
    def shift(cls, x: complex) -> 'EllipticLaw':
        """A deterministic law x * identity."""
        return cls(x, 0.0, 0.0, 0.0)

    @property
    def is_deterministic(self) -> bool:
        return self.sigma == 0.0

    @property
    def sigma1(self) -> float:
        return self.sigma * math.sqrt((1.0 + self.mu) / 2.0)

    @property
    def sigma2(self) -> float:
        return self.sigma * math.sqrt((1.0 - self.mu) / 2.0)

    @property
    def coupling(self) -> complex:
        """c = sigma^2 mu e^{2 i phi}, the (1,1) entry of the second cumulant matrix."""
        return self.sigma ** 2 * self.mu * cmath.exp(2j * self.phi)

    @property
    def k1(self) -> np.ndarray:
        return np.diag([self.x, self.x.conjugate()]).astype(complex)

    @property
    def k2(self) -> np.ndarray:
        c = self.coupling
        s2 = self.sigma ** 2
        return np.array([[c, s2], [s2, c.conjugate()]], dtype=complex)

    @classmethod
    def from_k_matrices(cls, k1: np.ndarray, k2: np.ndarray) -> 'EllipticLaw':
        """Recovers the canonical (mu >= 0) parameters from the cumulant matrices."""
        x = complex(k1[0, 0])
        s2 = float(np.real(k2[0, 1]))
        if s2 < 0: raise ValueError(f"Second cumulant matrix has negative off-diagonal {s2}.")
        if s2 == 0.0: return cls(x, 0.0, 0.0, 0.0)
        c = complex(k2[0, 0])
        return cls(x, math.sqrt(s2), min(abs(c) / s2, 1.0), cmath.phase(c) / 2.0 if c != 0 else 0.0)

    def r_transform(self, q: Quaternion) -> Quaternion:
        """R(z, w) = (x + c z, sigma^2 w)."""
        return Quaternion(self.x + self.coupling * q.first, self.sigma ** 2 * q.second)

    def r_transform_hadamard(self, q: Quaternion) -> Quaternion:
        """Same transform evaluated as K^(1) + K^(2) o q in the 2x2 representation."""
        return Quaternion.from_matrix(self.k1 + self.k2 * q.to_matrix())

    # --- Closed-form projected Green's function and support ---

    def interior_density(self) -> float:
        """Uniform density 1/(pi sigma^2 (1 - mu^2)) inside the support."""
        if self.is_deterministic or abs(self.mu) >= 1.0: return math.inf
        return 1.0 / (math.pi * self.sigma ** 2 * (1.0 - self.mu ** 2))

    def contains(self, z: complex, dilation: float = 0.0) -> bool:
        """True when z lies inside the support ellipse (optionally grown by `dilation`)."""
        if self.is_deterministic: return abs(z - self.x) <= dilation
        u = cmath.exp(-1j * self.phi) * (z - self.x)
        a = self.sigma * (1.0 + self.mu) + dilation
        b = self.sigma * (1.0 - self.mu) + dilation
        if b <= 0: return abs(u.imag) <= 1e-12 and abs(u.real) <= a
        return (u.real / a) ** 2 + (u.imag / b) ** 2 <= 1.0

    def support_boundary(self, samples: int = 720) -> np.ndarray:
        """Points x + e^{i phi} sigma((1+mu) cos t + i (1-mu) sin t) around the ellipse."""
        t = np.linspace(0.0, 2.0 * np.pi, samples, endpoint=False)
        local = self.sigma * ((1.0 + self.mu) * np.cos(t) + 1j * (1.0 - self.mu) * np.sin(t))
        return self.x + cmath.exp(1j * self.phi) * local

    # --- Hermitian-type laws (|mu| = 1) ---

    @property
    def is_hermitian_line(self) -> bool:
        """True when the support collapses to a segment, a rotated and shifted semicircle."""
        return not self.is_deterministic and abs(self.mu) >= 1.0 - LINE_MU_TOL

    @property
    def line_direction(self) -> complex:
        """Unit vector along the major axis; mu = -1 turns it by a right angle."""
        return cmath.exp(1j * self.phi) * (1j if self.mu < 0 else 1.0)

    def line_coordinates(self, z: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """(t, d): position along the major axis and distance off it."""
        u = (np.asarray(z, dtype=complex) - self.x) / self.line_direction
        return u.real, np.abs(u.imag)

    def line_density(self, t: np.ndarray) -> np.ndarray:
        """Semicircle sqrt(4 sigma^2 - t^2)/(2 pi sigma^2) along the major axis."""
        t = np.asarray(t, dtype=float)
        s2 = self.sigma ** 2
        return np.sqrt(np.clip(4.0 * s2 - t * t, 0.0, None)) / (2.0 * math.pi * s2)

    def line_cdf(self, t: np.ndarray) -> np.ndarray:
        """Integral of line_density from -2 sigma to t."""
        u = np.clip(np.asarray(t, dtype=float) / (2.0 * self.sigma), -1.0, 1.0)
        return 0.5 + (u * np.sqrt(1.0 - u * u) + np.arcsin(u)) / math.pi

    def projected_greens(self, z: complex) -> Tuple[complex, float]:
        """
        Closed-form fixed point at w = 0.

        Returns:
            (G, Gamma): Gamma > 0 inside the support, 0 outside.
        """
        zp = complex(z) - self.x
        s2 = self.sigma ** 2
        c = self.coupling
        det = s2 ** 2 - abs(c) ** 2
        if s2 > 0 and det > 1e-14 * s2 ** 2:
            g_in = (s2 * zp.conjugate() - c.conjugate() * zp) / det
            gamma2 = (s2 - abs(zp - c * g_in) ** 2) / s2 ** 2
            if gamma2 > 0: return g_in, math.sqrt(gamma2)
        if abs(c) < 1e-300:
            if zp == 0: raise SingularQuaternionError(f"Deterministic law has a pole at z={z}.")
            return 1.0 / zp, 0.0
        root = cmath.sqrt(zp * zp - 4 * c)
        g1, g2 = (zp - root) / (2 * c), (zp + root) / (2 * c)
        return (g1 if abs(g1) <= abs(g2) else g2), 0.0


def elliptic_r_transform(law: EllipticLaw, q: Quaternion) -> Quaternion:
    """Returns x + sigma^2 (mu e^{2 i phi} z + w j) for q = (z, w)."""
    return law.r_transform(q)


def add_elliptic(a: EllipticLaw, b: EllipticLaw) -> EllipticLaw:
    """R transforms of free summands add, so the cumulant matrices add."""
    return EllipticLaw.from_k_matrices(a.k1 + b.k1, a.k2 + b.k2)


def scale_shift_law(law: EllipticLaw, alpha: complex, x0: complex = 0j) -> EllipticLaw:
    """
    Law of x0 + alpha A: x -> x0 + alpha x, sigma -> |alpha| sigma,
    phi -> phi + Arg(alpha), mu unchanged.
    """
    alpha = complex(alpha)
    if alpha == 0: raise DegenerateScaleError("Cannot scale a law by zero.")
    return EllipticLaw(complex(x0) + alpha * law.x, abs(alpha) * law.sigma, law.mu, law.phi + cmath.phase(alpha))


def scale_shift_transform(r: QuaternionTransform, alpha: complex, x0: complex = 0j) -> QuaternionTransform:
    """Quaternionic scaling law R_{x0 + alpha A}(q) = x0^ + alpha^ R_A(q alpha^)."""
    alpha = complex(alpha)
    if alpha == 0: raise DegenerateScaleError("Cannot scale a law by zero.")
    a_hat = Quaternion(alpha, 0)
    x_hat = Quaternion(x0, 0)
    return lambda q: x_hat + a_hat * r(q * a_hat)


# --- Scalar Series ---

class SeriesKind(Enum):
    MOMENTS = "moments"
    FREE_CUMULANTS = "free-cumulants"


@dataclass(frozen=True)
class ScalarSeries:
    """
    Coefficients c_1 .. c_nmax of a moment or free-cumulant sequence.
    The zeroth order is implicit (m_0 = 1).
    """
    coefficients: Tuple[complex, ...]
    kind: SeriesKind

    def __post_init__(self):
        object.__setattr__(self, 'coefficients', tuple(complex(c) for c in self.coefficients))

    @property
    def n_max(self) -> int:
        return len(self.coefficients)

    def order(self, n: int) -> complex:
        """Coefficient of order n (1-based)."""
        if not 1 <= n <= self.n_max: raise IndexError(f"Order {n} outside 1..{self.n_max}.")
        return self.coefficients[n - 1]

    def greens_expansion(self, z: complex) -> complex:
        """G(z) = sum_n m_n z^{-n-1} with m_0 = 1 (moments only)."""
        if self.kind is not SeriesKind.MOMENTS: return cumulants_to_moments_series(self).greens_expansion(z)
        inv = 1.0 / complex(z)
        return inv * (1.0 + sum(m * inv ** n for n, m in enumerate(self.coefficients, start=1)))

    def is_close(self, other: 'ScalarSeries', tol: float = 1e-12) -> bool:
        return self.kind == other.kind and self.n_max == other.n_max and \
            all(abs(a - b) <= tol * max(1.0, abs(a)) for a, b in zip(self.coefficients, other.coefficients))


def _compositional_powers(m: np.ndarray, n_max: int) -> list:
    """Truncated coefficient arrays of (y M(y))^k, k = 0..n_max, with M = 1 + sum m_n y^n."""
    base = np.zeros(n_max + 1, dtype=complex)
    base[1] = 1.0
    base[2:] = m[1:n_max]
    powers = [np.eye(1, n_max + 1, 0, dtype=complex)[0]]
    for _ in range(n_max):
        powers.append(np.convolve(powers[-1], base)[:n_max + 1])
    return powers


def cumulants_from_moments(m: ScalarSeries) -> ScalarSeries:
    """
    Free cumulants from moments via M(y) = C(y M(y)):
    kappa_n = m_n - sum_{k<n} kappa_k [(y M)^k]_n.
    """
    if m.kind is not SeriesKind.MOMENTS: raise ValueError("Expected a moment series.")
    n_max = m.n_max
    moments = np.concatenate([[1.0 + 0j], np.array(m.coefficients, dtype=complex)])
    powers = _compositional_powers(moments, n_max)
    kappa = np.zeros(n_max + 1, dtype=complex)
    for n in range(1, n_max + 1):
        kappa[n] = moments[n] - sum(kappa[k] * powers[k][n] for k in range(1, n))
    return ScalarSeries(tuple(kappa[1:]), SeriesKind.FREE_CUMULANTS)


def moments_from_cumulants(kappa: ScalarSeries) -> ScalarSeries:
    """Moments from free cumulants, order by order: m_n = sum_{k<=n} kappa_k [(y M)^k]_n."""
    if kappa.kind is not SeriesKind.FREE_CUMULANTS: raise ValueError("Expected a free-cumulant series.")
    n_max = kappa.n_max
    k = np.concatenate([[0j], np.array(kappa.coefficients, dtype=complex)])
    moments = np.zeros(n_max + 1, dtype=complex)
    moments[0] = 1.0
    for n in range(1, n_max + 1):
        # [(yM)^j]_n only involves m_1 .. m_{n-1}.
        powers = _compositional_powers(moments, n)
        moments[n] = sum(k[j] * powers[j][n] for j in range(1, n + 1))
    return ScalarSeries(tuple(moments[1:]), SeriesKind.MOMENTS)


cumulants_to_moments_series = moments_from_cumulants


# --- Hermitian Transforms ---

class TransformKind(Enum):
    R = "R"
    S = "S"


@dataclass(frozen=True)
class HermitianTransform:
    """
    An R or S transform given by an evaluator (and optionally its derivative),
    evaluable on a disk around 0.
    """
    kind: TransformKind
    evaluator: Callable[[complex], complex]
    derivative: Optional[Callable[[complex], complex]] = None
    series: Optional[ScalarSeries] = None

    def __call__(self, z: complex) -> complex:
        return complex(self.evaluator(complex(z)))

    def slope(self, z: complex) -> complex:
        if self.derivative is not None: return complex(self.derivative(complex(z)))
        h = 1e-6 * max(1.0, abs(z))
        return (self(z + h) - self(z - h)) / (2 * h)

    @property
    def at_zero(self) -> complex:
        return self(0j)

    @classmethod
    def polynomial(cls, coefficients: Sequence[complex], kind: TransformKind = TransformKind.R) -> 'HermitianTransform':
        """R(z) = c_0 + c_1 z + ... (for R transforms c_{n-1} = kappa_n)."""
        p = Polynomial(np.asarray(coefficients, dtype=complex))
        dp = p.deriv()
        return cls(kind, lambda z: complex(p(z)), lambda z: complex(dp(z)))

    @classmethod
    def from_series(cls, series: ScalarSeries) -> 'HermitianTransform':
        """R transform R(z) = sum kappa_n z^{n-1} of a moment or cumulant series."""
        kappa = series if series.kind is SeriesKind.FREE_CUMULANTS else cumulants_from_moments(series)
        out = cls.polynomial(kappa.coefficients, TransformKind.R)
        return cls(out.kind, out.evaluator, out.derivative, kappa)

    @classmethod
    def constant(cls, x: complex, kind: TransformKind = TransformKind.R) -> 'HermitianTransform':
        return cls.polynomial([x], kind)


def hermitian_greens(r: HermitianTransform, z: complex, options: Optional[SolverOptions] = None) -> complex:
    """
    Solves G = 1/(z - R(G)) on the physical branch. The root is tracked from
    z + i L (where G ~ 1/z) down to z, so G ~ 1/z at infinity and the
    Herglotz sign Im G <= 0 for Im z > 0 hold by continuity.
    """
    opts = options or DEFAULT_OPTIONS
    z = complex(z)
    direction = 1.0 if z.imag >= 0 else -1.0
    scale = 1.0 + abs(z) + abs(r.at_zero)
    offsets = [4.0 * scale * 0.5 ** k for k in range(64) if 4.0 * scale * 0.5 ** k > 1e-7 * scale] + [0.0]
    g = 1.0 / (z + 1j * direction * offsets[0])
    for offset in offsets:
        zk = z + 1j * direction * offset
        res = newton_complex(lambda u: u * (zk - r(u)) - 1.0, g,
                             derivative=lambda u: zk - r(u) - u * r.slope(u), options=opts)
        if not res.success:
            raise NoConvergenceError(f"Resolvent solve failed at z={zk}", res.residual, [f"offset={offset:g}"])
        g = complex(res.x[0])
    if z.imag > 0 and g.imag > 1e-10:
        logger.warning("Herglotz sign violated at z=%s: G=%s", z, g)
    return g


def self_energy(r: HermitianTransform, z: complex, options: Optional[SolverOptions] = None) -> complex:
    """Sigma(z) = R(G(z)), so that G = 1/(z - Sigma)."""
    return r(hermitian_greens(r, z, options))


def _solve_reciprocal_fixed_point(t: Callable[[complex], complex], z: complex, u0: complex,
                                  options: SolverOptions, label: str) -> complex:
    """Solves u T(z u) = 1 by continuation from 0 to z, starting at u0 = 1/T(0)."""
    u = u0
    for k in range(1, CONTINUATION_STEPS + 1):
        zk = z * k / CONTINUATION_STEPS
        res = newton_complex(lambda v: v * t(zk * v) - 1.0, u, options=options)
        if not res.success:
            raise NoConvergenceError(f"{label} failed at z={zk}", res.residual, [f"step {k}/{CONTINUATION_STEPS}"])
        u = complex(res.x[0])
    return u


def s_r_convert(t: HermitianTransform, direction: str, z: complex, options: Optional[SolverOptions] = None) -> complex:
    """
    Converts between R and S transforms at z.

    Args:
        t (HermitianTransform): The input transform.
        direction (str): 'R->S' (S(z) = 1/R(z S(z))) or 'S->R' (R(z) = 1/S(z R(z))).
        z (complex): Evaluation point.

    Returns:
        complex: The converted transform at z, continuous from 1/t(0) at z = 0.
    """
    opts = options or DEFAULT_OPTIONS
    expected = {'R->S': TransformKind.R, 'S->R': TransformKind.S}
    if direction not in expected: raise ValueError(f"Unknown conversion direction '{direction}'.")
    if t.kind is not expected[direction]:
        raise ValueError(f"Direction {direction} needs a {expected[direction].value} transform, got {t.kind.value}.")
    at_zero = t.at_zero
    if abs(at_zero) < 1e-14:
        raise UndefinedTransformError(f"{direction} conversion needs a nonzero value at 0 (first cumulant), got {at_zero}.")
    return _solve_reciprocal_fixed_point(t, complex(z), 1.0 / at_zero, opts, f"{direction} conversion")


def s_transform(r: HermitianTransform, options: Optional[SolverOptions] = None) -> HermitianTransform:
    """The S transform of r as a lazily evaluated transform."""
    if abs(r.at_zero) < 1e-14: raise UndefinedTransformError("S transform needs a nonzero first cumulant.")
    return HermitianTransform(TransformKind.S, lambda z: s_r_convert(r, 'R->S', z, options))


def multiply_hermitian(ra: HermitianTransform, rb: HermitianTransform, z: complex,
                       options: Optional[SolverOptions] = None, cross_check: bool = True) -> complex:
    """
    R transform of a free product: solves v = z R_A(w), w = z R_B(v) by Newton,
    continued from v = w = 0 at z = 0, and returns R_A(w) R_B(v). When both
    first cumulants are nonzero the result is compared with the S route.
    """
    opts = options or DEFAULT_OPTIONS
    z = complex(z)
    state = np.zeros(4)
    for k in range(1, CONTINUATION_STEPS + 1):
        zk = z * k / CONTINUATION_STEPS

        def system(x: np.ndarray, zk=zk) -> np.ndarray:
            v, w = complex(x[0], x[1]), complex(x[2], x[3])
            e1 = v - zk * ra(w)
            e2 = w - zk * rb(v)
            return np.array([e1.real, e1.imag, e2.real, e2.imag])

        res = newton_solve(system, state, options=opts)
        if not res.success:
            raise NoConvergenceError(f"Product transform solve failed at z={zk}", res.residual,
                                     [f"step {k}/{CONTINUATION_STEPS}"])
        state = res.x
    v, w = complex(state[0], state[1]), complex(state[2], state[3])
    value = ra(w) * rb(v)
    if cross_check and abs(ra.at_zero) > 1e-14 and abs(rb.at_zero) > 1e-14:
        other = multiply_hermitian_via_s(ra, rb, z, opts)
        if abs(other - value) > 1e-8 * max(1.0, abs(value)):
            logger.warning("R and S routes disagree at z=%s: %s vs %s", z, value, other)
    return value


def multiply_hermitian_via_s(ra: HermitianTransform, rb: HermitianTransform, z: complex,
                             options: Optional[SolverOptions] = None) -> complex:
    """R_AB(z) from S_AB = S_A S_B: solves u S_A(z u) S_B(z u) = 1."""
    opts = options or DEFAULT_OPTIONS
    sa, sb = s_transform(ra, opts), s_transform(rb, opts)
    u0 = ra.at_zero * rb.at_zero
    return _solve_reciprocal_fixed_point(lambda y: sa(y) * sb(y), complex(z), u0, opts, "S-route product")

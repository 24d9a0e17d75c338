"""
qf_newton.py

This module provides the damped Newton / Gauss-Newton solvers shared by the
law, Green's function and product modules:

1.  `newton_solve` works on a real vector of unknowns with a finite-difference
    (or supplied) Jacobian and least-squares steps, so over-determined but
    consistent systems are handled the same way as square ones.
2.  `newton_complex` solves a scalar analytic equation f(z) = 0.
3.  `batched_newton` runs many independent small systems at once on numpy
    arrays; it backs the vectorized product-density marches.

Every step that fails to reduce the residual is halved (damping factor 1/2).
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np

from qf_errors import QFreeError

logger = logging.getLogger(__name__)

# --- Type Aliases for Clarity ---
RealSystem = Callable[[np.ndarray], np.ndarray]
BatchedSystem = Callable[[np.ndarray, np.ndarray], np.ndarray]

MIN_STEP_FRACTION = 1e-6


@dataclass(frozen=True)
class SolverOptions:
    """Tolerances and iteration caps used by every solver in the package."""
    tol: float = 1e-12
    residual_tol: float = 1e-10
    max_iter: int = 200
    damping: float = 0.5
    fd_step: float = 1e-7

    def with_max_iter(self, max_iter: int) -> 'SolverOptions':
        return SolverOptions(self.tol, self.residual_tol, max_iter, self.damping, self.fd_step)


DEFAULT_OPTIONS = SolverOptions()


@dataclass
class NewtonResult:
    """Outcome of a Newton solve."""
    x: np.ndarray
    success: bool
    residual: float
    iterations: int
    message: str = ''
    history: List[float] = field(default_factory=list)


def _safe_norm(func: RealSystem, x: np.ndarray) -> Tuple[np.ndarray, float]:
    """Evaluates func and its norm; singular or non-finite evaluations count as infinite."""
    try:
        with np.errstate(all='ignore'):
            f = np.asarray(func(x), dtype=float)
    except (QFreeError, ZeroDivisionError, FloatingPointError, OverflowError):
        return np.full(1, np.inf), float('inf')
    norm = float(np.linalg.norm(f))
    if not np.isfinite(norm): return f, float('inf')
    return f, norm


def fd_jacobian(func: RealSystem, x: np.ndarray, f0: np.ndarray, step: float) -> np.ndarray:
    """Forward-difference Jacobian of func at x."""
    jac = np.empty((f0.size, x.size))
    for k in range(x.size):
        h = step * max(1.0, abs(x[k]))
        xk = x.copy()
        xk[k] += h
        fk, _ = _safe_norm(func, xk)
        if fk.size != f0.size: fk = np.full(f0.size, np.inf)
        jac[:, k] = (fk - f0) / h
    return jac


def newton_solve(func: RealSystem, x0, jac: Optional[Callable[[np.ndarray], np.ndarray]] = None,
                 options: Optional[SolverOptions] = None) -> NewtonResult:
    """
    Damped Gauss-Newton iteration on a real system func(x) = 0.

    Args:
        func: Maps an n-vector to an m-vector of residuals, m >= n.
        x0: Starting point.
        jac: Optional analytic Jacobian; a forward-difference one is used otherwise.
        options: Tolerances and caps.

    Returns:
        NewtonResult: success is True when the residual norm reaches `tol`, or when
        the iteration stagnates at a residual below `residual_tol`.
    """
    opts = options or DEFAULT_OPTIONS
    x = np.array(x0, dtype=float)
    f, norm = _safe_norm(func, x)
    history = [norm]
    if not np.isfinite(norm):
        return NewtonResult(x, False, norm, 0, 'non-finite residual at the starting point', history)
    for it in range(1, opts.max_iter + 1):
        if norm <= opts.tol:
            return NewtonResult(x, True, norm, it - 1, 'converged', history)
        j = jac(x) if jac is not None else fd_jacobian(func, x, f, opts.fd_step)
        if not np.all(np.isfinite(j)):
            return NewtonResult(x, norm <= opts.residual_tol, norm, it, 'non-finite Jacobian', history)
        step, *_ = np.linalg.lstsq(j, -f, rcond=None)
        lam = 1.0
        while True:
            x_new = x + lam * step
            f_new, norm_new = _safe_norm(func, x_new)
            if norm_new < norm: break
            lam *= opts.damping
            if lam < MIN_STEP_FRACTION:
                return NewtonResult(x, norm <= opts.residual_tol, norm, it, 'stagnated', history)
        x, f, norm = x_new, f_new, norm_new
        history.append(norm)
    return NewtonResult(x, norm <= opts.tol, norm, opts.max_iter, 'iteration cap reached', history)


def newton_complex(func: Callable[[complex], complex], z0: complex,
                   derivative: Optional[Callable[[complex], complex]] = None,
                   options: Optional[SolverOptions] = None) -> NewtonResult:
    """
    Damped Newton iteration for a scalar analytic equation func(z) = 0.
    Without a derivative, a central complex difference is used.
    """
    opts = options or DEFAULT_OPTIONS

    def value(z: complex) -> complex:
        try:
            out = complex(func(z))
        except (QFreeError, ZeroDivisionError, OverflowError):
            return complex(np.inf)
        return out

    def slope(z: complex) -> complex:
        if derivative is not None: return complex(derivative(z))
        h = 1e-6 * max(1.0, abs(z))
        return (value(z + h) - value(z - h)) / (2 * h)

    z = complex(z0)
    f = value(z)
    norm = abs(f)
    history = [norm]
    for it in range(1, opts.max_iter + 1):
        if norm <= opts.tol:
            return NewtonResult(np.array([z]), True, norm, it - 1, 'converged', history)
        d = slope(z)
        if d == 0 or not np.isfinite(abs(d)):
            return NewtonResult(np.array([z]), norm <= opts.residual_tol, norm, it, 'vanishing derivative', history)
        step = -f / d
        lam = 1.0
        while True:
            z_new = z + lam * step
            f_new = value(z_new)
            if np.isfinite(abs(f_new)) and abs(f_new) < norm: break
            lam *= opts.damping
            if lam < MIN_STEP_FRACTION:
                return NewtonResult(np.array([z]), norm <= opts.residual_tol, norm, it, 'stagnated', history)
        z, f, norm = z_new, f_new, abs(f_new)
        history.append(norm)
    return NewtonResult(np.array([z]), norm <= opts.tol, norm, opts.max_iter, 'iteration cap reached', history)


@dataclass
class BatchedResult:
    """Outcome of a batched Newton solve: one row per system."""
    x: np.ndarray
    converged: np.ndarray
    residual: np.ndarray


def _batched_fd_jacobian(func: BatchedSystem, x: np.ndarray, params: np.ndarray, f0: np.ndarray,
                         step: float) -> np.ndarray:
    m, n = x.shape
    jac = np.empty((m, f0.shape[1], n))
    for k in range(n):
        h = step * np.maximum(1.0, np.abs(x[:, k]))
        xk = x.copy()
        xk[:, k] += h
        jac[:, :, k] = (func(xk, params) - f0) / h[:, None]
    return jac


def batched_newton(func: BatchedSystem, x0: np.ndarray, params: Optional[np.ndarray] = None,
                   jac: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None,
                   options: Optional[SolverOptions] = None, max_halvings: int = 20) -> BatchedResult:
    """
    Damped Gauss-Newton on M independent systems at once.

    Args:
        func: Maps an (M, n) array of unknowns and the matching (M, k) rows of
            `params` to an (M, m) array of residuals. It is called on row subsets.
        x0: (M, n) starting points.
        params: Optional (M, k) per-system parameters, sliced along with x.
        jac: Optional analytic Jacobian (x, params) -> (M, m, n).
        options: Tolerances and caps; each row stops independently.

    Returns:
        BatchedResult: rows whose residual reached `residual_tol` are converged.
    """
    opts = options or DEFAULT_OPTIONS
    x = np.array(x0, dtype=float)
    if x.ndim != 2: raise ValueError(f"Batched unknowns must be 2-D, got shape {x.shape}.")
    p = np.zeros((x.shape[0], 0)) if params is None else np.asarray(params, dtype=float).reshape(x.shape[0], -1)
    if x.shape[0] == 0: return BatchedResult(x, np.zeros(0, dtype=bool), np.zeros(0))
    with np.errstate(all='ignore'):
        f = func(x, p)
        norm = np.linalg.norm(f, axis=1)
        norm[~np.isfinite(norm)] = np.inf
        active = norm > opts.tol
        for _ in range(opts.max_iter):
            if not np.any(active): break
            idx = np.flatnonzero(active)
            xa, fa, pa = x[idx], f[idx], p[idx]
            ja = jac(xa, pa) if jac is not None else _batched_fd_jacobian(func, xa, pa, fa, opts.fd_step)
            bad = ~np.all(np.isfinite(ja), axis=(1, 2))
            ja[bad] = 0.0
            step = -np.einsum('kij,kj->ki', np.linalg.pinv(ja), np.nan_to_num(fa))
            lam = np.ones(idx.size)
            accepted = np.zeros(idx.size, dtype=bool)
            x_new, f_new, n_new = xa.copy(), fa.copy(), norm[idx].copy()
            for _ in range(max_halvings):
                pending = ~accepted
                if not np.any(pending): break
                trial = xa[pending] + lam[pending, None] * step[pending]
                f_trial = func(trial, pa[pending])
                n_trial = np.linalg.norm(f_trial, axis=1)
                n_trial[~np.isfinite(n_trial)] = np.inf
                better = n_trial < norm[idx][pending]
                sel = np.flatnonzero(pending)[better]
                x_new[sel], f_new[sel], n_new[sel] = trial[better], f_trial[better], n_trial[better]
                accepted[sel] = True
                lam[pending] *= opts.damping
            x[idx], f[idx], norm[idx] = x_new, f_new, n_new
            # Rows that could not improve have stagnated.
            stalled = idx[~accepted]
            active[stalled] = False
            active &= norm > opts.tol
    return BatchedResult(x, norm <= opts.residual_tol, norm)

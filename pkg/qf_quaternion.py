"""
qf_quaternion.py

This module defines the core quaternion types: the Quaternion stored as a
Cayley-Dickson pair (z, w) of complex numbers, and the BlockQuaternionMatrix
(X, Y) whose 2N x 2N form is [[X, Y], [-Y^H, X^H]]. It also provides the block
trace and the block resolvent used by empirical Green's functions.

The 2x2 complex representation of q = (z, w) is [[z, w], [-conj(w), conj(z)]].
"""

import cmath
from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy import linalg

from qf_errors import SingularQuaternionError

# --- Type Aliases for Clarity ---
Scalar = Union[int, float, complex]

# Norms below this are treated as the zero quaternion.
ZERO_NORM2 = 1e-300


@dataclass(frozen=True)
class Quaternion:
    """
    A quaternion q = (z, w) = z + w j, with z, w complex.

    Args:
        first (complex): The first Cayley-Dickson part z.
        second (complex): The second Cayley-Dickson part w.
    """
    first: complex = 0j
    second: complex = 0j

    def __post_init__(self):
        object.__setattr__(self, 'first', complex(self.first))
        object.__setattr__(self, 'second', complex(self.second))
        if not (cmath.isfinite(self.first) and cmath.isfinite(self.second)):
            raise ValueError(f"Quaternion components must be finite, got ({self.first}, {self.second}).")

    # --- Algebra ---

    def __add__(self, other: Union['Quaternion', Scalar]) -> 'Quaternion':
        other = as_quaternion(other)
        return Quaternion(self.first + other.first, self.second + other.second)

    __radd__ = __add__

    def __sub__(self, other: Union['Quaternion', Scalar]) -> 'Quaternion':
        other = as_quaternion(other)
        return Quaternion(self.first - other.first, self.second - other.second)

    def __rsub__(self, other: Scalar) -> 'Quaternion':
        return as_quaternion(other) - self

    def __neg__(self) -> 'Quaternion':
        return Quaternion(-self.first, -self.second)

    def __mul__(self, other: Union['Quaternion', Scalar]) -> 'Quaternion':
        """(z, w)(v, y) = (zv - w conj(y), zy + w conj(v)); complex scalars embed as (c, 0)."""
        other = as_quaternion(other)
        z, w = self.first, self.second
        v, y = other.first, other.second
        return Quaternion(z * v - w * y.conjugate(), z * y + w * v.conjugate())

    def __rmul__(self, other: Scalar) -> 'Quaternion':
        return as_quaternion(other) * self

    def conjugate(self) -> 'Quaternion':
        """Returns q* = (conj(z), -w)."""
        return Quaternion(self.first.conjugate(), -self.second)

    def norm2(self) -> float:
        """Returns |z|^2 + |w|^2, the determinant of the 2x2 form."""
        return abs(self.first) ** 2 + abs(self.second) ** 2

    def inverse(self) -> 'Quaternion':
        """Returns q^-1 = q* / norm2(q)."""
        n2 = self.norm2()
        if n2 < ZERO_NORM2: raise SingularQuaternionError("Cannot invert the zero quaternion.")
        return Quaternion(self.first.conjugate() / n2, -self.second / n2)

    def rotate(self, phi: float, side: str) -> 'Quaternion':
        """
        Returns the left ([q]^L = U q U^H) or right ([q]^R = U^H q U) rotated copy,
        with U = diag(e^{i phi/4}, e^{-i phi/4}). The first part is unchanged and
        the second part picks up e^{+i phi/2} (left) or e^{-i phi/2} (right).
        """
        if side == 'L': return Quaternion(self.first, self.second * cmath.exp(0.5j * phi))
        if side == 'R': return Quaternion(self.first, self.second * cmath.exp(-0.5j * phi))
        raise ValueError(f"Rotation side must be 'L' or 'R', got '{side}'.")

    # --- Representations ---

    def to_matrix(self) -> np.ndarray:
        """Returns the 2x2 complex matrix [[z, w], [-conj(w), conj(z)]]."""
        z, w = self.first, self.second
        return np.array([[z, w], [-w.conjugate(), z.conjugate()]], dtype=complex)

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> 'Quaternion':
        """Decodes a quaternion from the first row of its 2x2 form."""
        m = np.asarray(m)
        if m.shape != (2, 2): raise ValueError(f"Expected a 2x2 matrix, got shape {m.shape}.")
        return cls(complex(m[0, 0]), complex(m[0, 1]))

    def is_close(self, other: 'Quaternion', tol: float = 1e-12) -> bool:
        other = as_quaternion(other)
        return abs(self.first - other.first) <= tol and abs(self.second - other.second) <= tol

    def __repr__(self) -> str:
        return f"Quaternion({self.first!r}, {self.second!r})"


def as_quaternion(value: Union[Quaternion, Scalar]) -> Quaternion:
    """Embeds complex scalars as (c, 0); quaternions pass through."""
    if isinstance(value, Quaternion): return value
    if isinstance(value, (int, float, complex, np.number)): return Quaternion(complex(value), 0j)
    raise TypeError(f"Cannot interpret {type(value).__name__} as a quaternion.")


# --- Quaternionic Units ---
ONE = Quaternion(1, 0)
I = Quaternion(1j, 0)
J = Quaternion(0, 1)
K = Quaternion(0, 1j)


# --- Block Quaternionic Matrices ---

@dataclass(frozen=True)
class BlockQuaternionMatrix:
    """
    A quaternionic N x N matrix Q = (X, Y). Only the upper blocks are stored;
    the lower row of the 2N x 2N form, [-Y^H, X^H], is determined by them.
    """
    x_block: np.ndarray
    y_block: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x_block, dtype=complex)
        y = np.asarray(self.y_block, dtype=complex)
        if x.ndim != 2 or x.shape[0] != x.shape[1]:
            raise ValueError(f"X block must be square, got shape {x.shape}.")
        if y.shape != x.shape:
            raise ValueError(f"Block dimension mismatch: X is {x.shape}, Y is {y.shape}.")
        object.__setattr__(self, 'x_block', x)
        object.__setattr__(self, 'y_block', y)

    @property
    def dim(self) -> int:
        return self.x_block.shape[0]

    @classmethod
    def from_quaternion(cls, q: Quaternion, n: int) -> 'BlockQuaternionMatrix':
        """Returns q (x) I_N."""
        eye = np.eye(n, dtype=complex)
        return cls(q.first * eye, q.second * eye)

    @classmethod
    def from_matrix(cls, x: np.ndarray) -> 'BlockQuaternionMatrix':
        """Embeds a complex matrix X as (X, 0)."""
        x = np.asarray(x, dtype=complex)
        return cls(x, np.zeros_like(x))

    def to_dense(self) -> np.ndarray:
        """Returns the 2N x 2N complex form [[X, Y], [-Y^H, X^H]]."""
        x, y = self.x_block, self.y_block
        return np.block([[x, y], [-y.conj().T, x.conj().T]])


def block_trace(m: BlockQuaternionMatrix) -> Quaternion:
    """Projects a quaternionic matrix to the quaternion (Tr X, Tr Y)."""
    return Quaternion(complex(np.trace(m.x_block)), complex(np.trace(m.y_block)))


def block_resolvent(x: np.ndarray, q: Quaternion) -> Quaternion:
    """
    Computes (1/N) Tr_b (q (x) I - (X, 0))^-1 through the closed-form block
    inversion. With A = zI - X and H_L = A A^H + |w|^2 I, the inverse has
    upper blocks (A^H H_L^-1, -w H_R^-1) and Tr H_R^-1 = Tr H_L^-1, so a single
    Cholesky factorization of H_L suffices.

    Args:
        x (np.ndarray): Square complex matrix X.
        q (Quaternion): The point (z, w).

    Returns:
        Quaternion: (G, Gamma) = ((1/N) Tr H_L^-1 A^H, -w (1/N) Tr H_R^-1).
    """
    x = np.asarray(x, dtype=complex)
    if x.ndim != 2 or x.shape[0] != x.shape[1]: raise ValueError(f"X must be square, got shape {x.shape}.")
    n = x.shape[0]
    eye = np.eye(n, dtype=complex)
    a = q.first * eye - x
    a_h = a.conj().T
    h_left = a @ a_h + abs(q.second) ** 2 * eye
    try:
        factor = linalg.cho_factor(h_left, lower=False, check_finite=True)
    except linalg.LinAlgError as exc:
        raise SingularQuaternionError(f"Block system is singular at q={q}: {exc}") from exc
    first = np.trace(linalg.cho_solve(factor, a_h)) / n
    second = 0j
    if q.second != 0:
        second = -q.second * np.trace(linalg.cho_solve(factor, eye)) / n
    return Quaternion(complex(first), complex(second))

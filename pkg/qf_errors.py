"""
qf_errors.py

This module defines the exception hierarchy shared by the qfree modules.
Every error derives from QFreeError, itself a ValueError, so callers that
only guard against ValueError keep working.
"""

from typing import List, Optional


class QFreeError(ValueError):
    """Base class for all qfree errors."""


class SingularQuaternionError(QFreeError):
    """Raised when a quaternion, block system or closed-form denominator is singular."""


class DegenerateScaleError(QFreeError):
    """Raised when a law is scaled by zero."""


class UndefinedTransformError(QFreeError):
    """Raised when an S transform is requested for a law with vanishing first cumulant."""


class UnsupportedSpecError(QFreeError):
    """Raised when no theory is available for an ensemble tree shape."""


class EigenSolverError(QFreeError):
    """Raised when the dense eigensolver refuses or fails on an input matrix."""


class NoConvergenceError(QFreeError):
    """
    Raised when an iterative solver gives up.

    Args:
        message (str): Human-readable description.
        residual (float): Best residual norm reached.
        trace (list): Short record of the seeds or steps that were attempted.
    """
    def __init__(self, message: str, residual: float = float('inf'), trace: Optional[List[str]] = None):
        super().__init__(f"{message} (best residual {residual:.3e})")
        self.residual = residual
        self.trace: List[str] = trace or []


class SpecParseError(QFreeError):
    """
    Raised when an ensemble spec fails to parse or validate.

    Args:
        message (str): What went wrong.
        path (str): Location inside the spec, e.g. ``$.a.of.mu``.
    """
    def __init__(self, message: str, path: str = '$'):
        super().__init__(f"{path}: {message}")
        self.path = path

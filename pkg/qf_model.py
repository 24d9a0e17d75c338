"""
qf_model.py

This module defines the shared data structures that the solvers produce and
the pipeline serializes: the rectangular GridSpec, the DensityGrid sampled on
it, the polar ContourCurve of a support boundary, and the versioned CSV
writer all artifacts go through.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.spatial import cKDTree

logger = logging.getLogger(__name__)

# --- Type Aliases for Clarity ---
PathLike = Union[str, Path]

CSV_VERSION_LINE = "# qfree-csv v1"
JSON_SCHEMA = "qfree-json v1"


class Regime(Enum):
    INTERIOR = "interior"
    EXTERIOR = "exterior"


def fmt(value: float) -> str:
    """17 significant digits, enough to round-trip a double."""
    return format(float(value), '.17g')


def write_csv(path: PathLike, header: Sequence[str], rows: Iterable[Sequence[object]]) -> Path:
    """Writes a versioned CSV: the version comment, the header, then the rows."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open('w', newline='\n', encoding='utf-8') as handle:
        handle.write(CSV_VERSION_LINE + "\n")
        handle.write(",".join(header) + "\n")
        for row in rows:
            handle.write(",".join(fmt(v) if isinstance(v, (float, np.floating)) else str(v) for v in row) + "\n")
    return path


# --- Grids ---

@dataclass(frozen=True)
class GridSpec:
    """A rectangular grid of nx x ny cells over [x_min, x_max] x [y_min, y_max]."""
    x_min: float
    x_max: float
    y_min: float
    y_max: float
    nx: int
    ny: int

    def __post_init__(self):
        bounds = (self.x_min, self.x_max, self.y_min, self.y_max)
        if not all(math.isfinite(b) for b in bounds): raise ValueError(f"Grid bounds must be finite, got {bounds}.")
        if self.x_max <= self.x_min or self.y_max <= self.y_min: raise ValueError(f"Grid bounds are empty: {bounds}.")
        if self.nx < 1 or self.ny < 1: raise ValueError(f"Grid needs at least one cell per axis, got {self.nx}x{self.ny}.")

    @classmethod
    def parse(cls, text: str) -> 'GridSpec':
        """Parses 'xmin,xmax,ymin,ymax,nx,ny'."""
        parts = [p.strip() for p in text.split(',')]
        if len(parts) != 6: raise ValueError(f"Grid must be 'xmin,xmax,ymin,ymax,nx,ny', got '{text}'.")
        try:
            return cls(float(parts[0]), float(parts[1]), float(parts[2]), float(parts[3]), int(parts[4]), int(parts[5]))
        except ValueError as exc:
            raise ValueError(f"Grid '{text}' is malformed: {exc}") from exc

    def to_text(self) -> str:
        return f"{fmt(self.x_min)},{fmt(self.x_max)},{fmt(self.y_min)},{fmt(self.y_max)},{self.nx},{self.ny}"

    @property
    def x_edges(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.nx + 1)

    @property
    def y_edges(self) -> np.ndarray:
        return np.linspace(self.y_min, self.y_max, self.ny + 1)

    @property
    def x_centers(self) -> np.ndarray:
        e = self.x_edges
        return 0.5 * (e[:-1] + e[1:])

    @property
    def y_centers(self) -> np.ndarray:
        e = self.y_edges
        return 0.5 * (e[:-1] + e[1:])

    @property
    def cell_area(self) -> float:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min) / (self.nx * self.ny)

    def centers(self) -> np.ndarray:
        """Complex cell centers, shape (nx, ny), first index along the real axis."""
        return self.x_centers[:, None] + 1j * self.y_centers[None, :]


@dataclass
class DensityGrid:
    """
    Density per unit area sampled at cell centers. Cells whose solve failed are
    marked invalid and excluded from the mass.
    """
    grid: GridSpec
    values: np.ndarray
    valid: np.ndarray = None
    imag_residue: np.ndarray = None

    def __post_init__(self):
        shape = (self.grid.nx, self.grid.ny)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != shape: raise ValueError(f"Density values have shape {self.values.shape}, expected {shape}.")
        self.valid = np.ones(shape, dtype=bool) if self.valid is None else np.asarray(self.valid, dtype=bool)
        self.imag_residue = np.zeros(shape) if self.imag_residue is None else np.asarray(self.imag_residue, dtype=float)

    @property
    def invalid_count(self) -> int:
        return int(np.count_nonzero(~self.valid))

    def total_mass(self) -> float:
        return float(np.sum(self.values[self.valid]) * self.grid.cell_area)

    def value_at(self, z: complex) -> float:
        """Value of the cell containing z (nearest cell when z is outside)."""
        g = self.grid
        i = int(np.clip((z.real - g.x_min) / (g.x_max - g.x_min) * g.nx, 0, g.nx - 1))
        j = int(np.clip((z.imag - g.y_min) / (g.y_max - g.y_min) * g.ny, 0, g.ny - 1))
        return float(self.values[i, j])

    def rows(self) -> Iterable[Tuple[float, float, float, int]]:
        xs, ys = self.grid.x_centers, self.grid.y_centers
        for i in range(self.grid.nx):
            for j in range(self.grid.ny):
                yield xs[i], ys[j], float(self.values[i, j]), int(self.valid[i, j])

    def to_csv(self, path: PathLike) -> Path:
        return write_csv(path, ["re", "im", "rho", "valid"], self.rows())


# --- Contours ---

def _points_in_polygon(points: np.ndarray, polygon: np.ndarray, chunk: int = 4096) -> np.ndarray:
    """Even-odd test of complex points against one closed complex polygon."""
    inside = np.zeros(points.size, dtype=bool)
    if polygon.size < 3: return inside
    x0, y0 = polygon.real, polygon.imag
    x1, y1 = np.roll(x0, -1), np.roll(y0, -1)
    for start in range(0, points.size, chunk):
        p = points[start:start + chunk]
        px, py = p.real[:, None], p.imag[:, None]
        straddle = (y0[None, :] > py) != (y1[None, :] > py)
        with np.errstate(divide='ignore', invalid='ignore'):
            x_cross = x0[None, :] + (py - y0[None, :]) * (x1 - x0)[None, :] / (y1 - y0)[None, :]
        crossings = np.count_nonzero(straddle & (px < x_cross), axis=1)
        inside[start:start + chunk] = crossings % 2 == 1
    return inside


def _densify(z: np.ndarray, spacing: float) -> np.ndarray:
    """Resamples a polyline so consecutive points are at most `spacing` apart."""
    out = [z[:1]]
    for a, b in zip(z[:-1], z[1:]):
        k = max(1, int(math.ceil(abs(b - a) / spacing)))
        out.append(a + (b - a) * np.arange(1, k + 1) / k)
    return np.concatenate(out)


@dataclass
class ContourCurve:
    """
    Support boundary as polylines of (phi, r) samples; z = r e^{i phi}.

    Args:
        branches: One (k, 2) array of (phi, r) rows per polyline.
        residual: Largest defining-equation residual over all samples.
    """
    branches: List[np.ndarray] = field(default_factory=list)
    residual: float = 0.0

    def __post_init__(self):
        self.branches = [np.asarray(b, dtype=float).reshape(-1, 2) for b in self.branches]

    @property
    def branch_count(self) -> int:
        return len(self.branches)

    def points(self, index: Optional[int] = None) -> np.ndarray:
        """Complex samples of one branch, or of all branches concatenated."""
        chosen = self.branches if index is None else [self.branches[index]]
        if not chosen: return np.zeros(0, dtype=complex)
        return np.concatenate([b[:, 1] * np.exp(1j * b[:, 0]) for b in chosen])

    def rows(self) -> Iterable[Tuple[int, float, float, float, float]]:
        for k, b in enumerate(self.branches):
            for phi, r in b:
                z = r * complex(math.cos(phi), math.sin(phi))
                yield k, phi, r, z.real, z.imag

    def to_csv(self, path: PathLike) -> Path:
        return write_csv(path, ["branch", "phi", "r", "re", "im"], self.rows())

    @classmethod
    def from_points(cls, branches: Sequence[np.ndarray], residual: float = 0.0) -> 'ContourCurve':
        """Builds a curve from complex polylines."""
        return cls([np.column_stack([np.angle(z), np.abs(z)]) for z in map(np.asarray, branches)], residual)

    @classmethod
    def from_samples(cls, phis: Sequence[float], roots_per_phi: Sequence[Sequence[float]],
                     residual: float = 0.0) -> 'ContourCurve':
        """
        Chains per-angle root lists into polylines. A root continues the polyline
        whose last radius is nearest; unmatched roots start new polylines. Pieces
        split by the 0/2pi seam are merged, and pieces meeting away from the origin
        (the two sides of a loop at a tangent angle) are joined.
        """
        phis = np.asarray(phis, dtype=float)
        if phis.size == 0: return cls([], residual)
        r_scale = max([max(r) for r in roots_per_phi if len(r)] + [1.0])
        dphi = float(np.median(np.diff(phis))) if phis.size > 1 else 1.0
        jump = 0.05 * r_scale + 10.0 * dphi * r_scale
        finished: List[List[Tuple[int, float]]] = []
        active: List[List[Tuple[int, float]]] = []
        for n, roots in enumerate(roots_per_phi):
            pending = sorted(float(r) for r in roots)
            still_active = []
            for line in sorted(active, key=lambda l: l[-1][1]):
                if pending:
                    k = int(np.argmin([abs(r - line[-1][1]) for r in pending]))
                    if abs(pending[k] - line[-1][1]) <= jump:
                        line.append((n, pending.pop(k)))
                        still_active.append(line)
                        continue
                finished.append(line)
            active = still_active + [[(n, r)] for r in pending]
        finished.extend(active)
        full_turn = phis.size > 1 and phis[-1] - phis[0] + dphi >= 2 * math.pi - 1e-9
        if full_turn: finished = cls._merge_seam(finished, phis.size - 1, jump)
        lines = [np.array([(phis[n], r) for n, r in line]) for line in finished]
        return cls(cls._join_tangent_ends(lines, 2 * jump), residual)

    @staticmethod
    def _merge_seam(lines: List[List[Tuple[int, float]]], last: int, jump: float) -> List[List[Tuple[int, float]]]:
        tails = [l for l in lines if l[-1][0] == last]
        heads = [l for l in lines if l[0][0] == 0]
        for tail in tails:
            candidates = [h for h in heads if h is not tail and abs(h[0][1] - tail[-1][1]) <= jump]
            if not candidates: continue
            head = min(candidates, key=lambda h: abs(h[0][1] - tail[-1][1]))
            heads.remove(head)
            lines.remove(head)
            tail.extend(head)
        return lines

    @staticmethod
    def _join_tangent_ends(lines: List[np.ndarray], tol: float) -> List[np.ndarray]:
        def ends(b: np.ndarray) -> Tuple[complex, complex]:
            return b[0, 1] * np.exp(1j * b[0, 0]), b[-1, 1] * np.exp(1j * b[-1, 0])

        lines = list(lines)
        while True:
            best = None
            for a in range(len(lines)):
                for b in range(a + 1, len(lines)):
                    ea, eb = ends(lines[a]), ends(lines[b])
                    for sa in (0, 1):
                        for sb in (0, 1):
                            # Ends at the origin belong to loops closing on themselves.
                            if abs(ea[sa]) <= tol or abs(eb[sb]) <= tol: continue
                            d = abs(ea[sa] - eb[sb])
                            if d <= tol and (best is None or d < best[0]): best = (d, a, b, sa, sb)
            if best is None: return lines
            _, a, b, sa, sb = best
            first = lines[a] if sa == 1 else lines[a][::-1]
            second = lines[b] if sb == 0 else lines[b][::-1]
            lines = [l for k, l in enumerate(lines) if k not in (a, b)] + [np.vstack([first, second])]

    def contains(self, points: np.ndarray, dilation: float = 0.0) -> np.ndarray:
        """
        True for points inside any closed branch (union of the branch polygons)
        or within `dilation` of the curve.
        """
        points = np.asarray(points, dtype=complex).ravel()
        inside = np.zeros(points.size, dtype=bool)
        for k in range(self.branch_count):
            inside |= _points_in_polygon(points, self.points(k))
        if dilation > 0 and self.branch_count:
            dense = np.concatenate([_densify(self.points(k), dilation / 4.0) for k in range(self.branch_count)])
            tree = cKDTree(np.column_stack([dense.real, dense.imag]))
            dist, _ = tree.query(np.column_stack([points.real, points.imag]), k=1)
            inside |= dist <= dilation
        return inside

    def bounding_box(self, margin: float = 0.0) -> Tuple[float, float, float, float]:
        z = self.points()
        if z.size == 0: return (-1.0, 1.0, -1.0, 1.0)
        return (float(z.real.min() - margin), float(z.real.max() + margin),
                float(z.imag.min() - margin), float(z.imag.max() + margin))

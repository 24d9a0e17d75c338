"""
qf_ensembles.py

This module defines ensemble expression trees and the Monte Carlo side of the
package:

1.  **Expression Trees**: Elliptic leaves (GUE and Ginibre are the standard
    special cases) combined with Shift, Scale, Sum and two-factor Product nodes.
    Every node can draw a sample matrix and report its theoretical law.
2.  **Sampling**: `sample_batch` draws reps independent matrices, one
    SeedSequence stream per rep, so the eigenvalue list depends only on
    (spec, N, reps, seed) and never on how the reps are scheduled.
3.  **Statistics**: mixed moments over words in X and X^H, 2-D histogram
    densities, and the comparison of an empirical spectrum against a
    theoretical density and support contour; laws supported on a segment are
    compared against the semicircle along that segment.
"""

import json
import logging
import math
from abc import ABC, abstractmethod
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from lark import Lark
from lark.exceptions import LarkError
from scipy import linalg, ndimage

from qf_errors import DegenerateScaleError, EigenSolverError, UnsupportedSpecError
from qf_greens import density_field, elliptic_contour
from qf_laws import EllipticLaw, add_elliptic, scale_shift_law
from qf_model import JSON_SCHEMA, ContourCurve, DensityGrid, GridSpec, PathLike, write_csv
from qf_newton import SolverOptions
from qf_product import ProductLaw, product_contour, product_density_field

logger = logging.getLogger(__name__)

# --- Type Aliases for Clarity ---
TheoryLaw = Union[EllipticLaw, ProductLaw]

MAX_EIGEN_DIM = 1024
COVERAGE_DILATION = 0.05
MIN_EXPECTED_COUNT = 20
LINE_BINS = 40


# --- Expression Trees ---

class EnsembleSpec(ABC):
    """A node of an ensemble expression tree."""

    @abstractmethod
    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Draws one N x N complex matrix; leaves draw independently."""

    @abstractmethod
    def theory(self) -> TheoryLaw:
        """The law of the node, when the tree shape has a theory."""


@dataclass(frozen=True)
class Elliptic(EnsembleSpec):
    law: EllipticLaw

    @classmethod
    def gue(cls) -> 'Elliptic':
        return cls(EllipticLaw.gue())

    @classmethod
    def ginibre(cls) -> 'Elliptic':
        return cls(EllipticLaw.ginibre())

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return sample_elliptic(self.law, n, rng)

    def theory(self) -> TheoryLaw:
        return self.law


@dataclass(frozen=True)
class Shift(EnsembleSpec):
    x: complex
    of: EnsembleSpec

    def __post_init__(self):
        object.__setattr__(self, 'x', complex(self.x))

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        m = self.of.sample(n, rng)
        m[np.diag_indices(n)] += self.x
        return m

    def theory(self) -> TheoryLaw:
        inner = self.of.theory()
        if isinstance(inner, EllipticLaw): return scale_shift_law(inner, 1.0, self.x)
        raise UnsupportedSpecError("A shifted product has no theory in this package.")


@dataclass(frozen=True)
class Scale(EnsembleSpec):
    alpha: complex
    of: EnsembleSpec

    def __post_init__(self):
        object.__setattr__(self, 'alpha', complex(self.alpha))
        if self.alpha == 0: raise DegenerateScaleError("Cannot scale an ensemble by zero.")

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return self.alpha * self.of.sample(n, rng)

    def theory(self) -> TheoryLaw:
        inner = self.of.theory()
        if isinstance(inner, EllipticLaw): return scale_shift_law(inner, self.alpha)
        raise UnsupportedSpecError("A scaled product has no theory in this package.")


@dataclass(frozen=True)
class Sum(EnsembleSpec):
    terms: Tuple[EnsembleSpec, ...]

    def __post_init__(self):
        object.__setattr__(self, 'terms', tuple(self.terms))
        if not self.terms: raise ValueError("A sum needs at least one term.")

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        total = self.terms[0].sample(n, rng)
        for term in self.terms[1:]:
            total = total + term.sample(n, rng)
        return total

    def theory(self) -> TheoryLaw:
        laws = [term.theory() for term in self.terms]
        if not all(isinstance(law, EllipticLaw) for law in laws):
            raise UnsupportedSpecError("Only sums of elliptic terms have a theory in this package.")
        total = laws[0]
        for law in laws[1:]:
            total = add_elliptic(total, law)
        return total


@dataclass(frozen=True)
class Product(EnsembleSpec):
    a: EnsembleSpec
    b: EnsembleSpec

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        left = self.a.sample(n, rng)
        return left @ self.b.sample(n, rng)

    def theory(self) -> TheoryLaw:
        la, lb = self.a.theory(), self.b.theory()
        if isinstance(la, EllipticLaw) and isinstance(lb, EllipticLaw): return ProductLaw(la, lb)
        raise UnsupportedSpecError("Products of three or more factors are not supported.")


# --- Sampling ---

def gue_matrix(n: int, rng: np.random.Generator) -> np.ndarray:
    """Standardized GUE draw: off-diagonal entries CN(0, 1/N), real diagonal with variance 1/N."""
    a = (rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))) * math.sqrt(0.5 / n)
    return (a + a.conj().T) / math.sqrt(2.0)


def sample_elliptic(law: EllipticLaw, n: int, rng: np.random.Generator) -> np.ndarray:
    """
    Draws X = x + e^{i phi}(sigma_1 H_1 + i sigma_2 H_2) with independent GUE
    draws H_1, H_2. A term whose sigma vanishes is skipped, so mu = +-1 samples
    are exactly hermitian up to the rotation.
    """
    if n < 2: raise ValueError(f"Matrix size must be at least 2, got {n}.")
    x = law.x * np.eye(n, dtype=complex)
    rotation = complex(math.cos(law.phi), math.sin(law.phi))
    if law.sigma1 > 0: x = x + rotation * law.sigma1 * gue_matrix(n, rng)
    if law.sigma2 > 0: x = x + rotation * 1j * law.sigma2 * gue_matrix(n, rng)
    return x


def sample_spec(spec: EnsembleSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    """Evaluates the tree once with independent draws at every leaf."""
    if n < 2: raise ValueError(f"Matrix size must be at least 2, got {n}.")
    return spec.sample(n, rng)


def eigenvalues(x: np.ndarray) -> np.ndarray:
    """
    All eigenvalues of a dense complex matrix through LAPACK (balancing,
    Hessenberg reduction and shifted QR).

    Raises:
        EigenSolverError: For N > 1024 or when the iteration fails.
    """
    x = np.asarray(x, dtype=complex)
    if x.ndim != 2 or x.shape[0] != x.shape[1]: raise ValueError(f"Expected a square matrix, got shape {x.shape}.")
    if x.shape[0] > MAX_EIGEN_DIM:
        raise EigenSolverError(f"Dense eigensolver is limited to N <= {MAX_EIGEN_DIM}, got {x.shape[0]}.")
    try:
        return linalg.eigvals(x, check_finite=True)
    except (linalg.LinAlgError, ValueError) as exc:
        raise EigenSolverError(f"Eigenvalue iteration failed: {exc}") from exc


def rep_generators(seed: int, reps: int) -> List[np.random.Generator]:
    """One independent generator per rep, spawned from the master seed."""
    return [np.random.default_rng(child) for child in np.random.SeedSequence(seed).spawn(reps)]


def sample_matrices(spec: EnsembleSpec, n: int, reps: int, seed: int,
                    max_workers: Optional[int] = None) -> List[np.ndarray]:
    """The reps sample matrices behind a SampleBatch, in rep order."""
    if reps < 1: raise ValueError(f"Need at least one rep, got {reps}.")
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        return list(pool.map(lambda rng: sample_spec(spec, n, rng), rep_generators(seed, reps)))


@dataclass
class SampleBatch:
    """Eigenvalues of reps independent N x N draws, concatenated in rep order."""
    spec: EnsembleSpec
    n: int
    reps: int
    seed: int
    eigenvalues: np.ndarray

    def __post_init__(self):
        self.eigenvalues = np.asarray(self.eigenvalues, dtype=complex).ravel()
        if self.eigenvalues.size != self.n * self.reps:
            raise ValueError(f"Expected {self.n * self.reps} eigenvalues, got {self.eigenvalues.size}.")

    def rows(self):
        for k, lam in enumerate(self.eigenvalues):
            yield k // self.n, k % self.n, lam.real, lam.imag

    def to_csv(self, path: PathLike) -> Path:
        return write_csv(path, ["rep", "index", "re", "im"], self.rows())


def sample_batch(spec: EnsembleSpec, n: int, reps: int, seed: int,
                 max_workers: Optional[int] = None) -> SampleBatch:
    """Samples reps matrices and collects their eigenvalues; bit-exact for a given seed."""
    if reps < 1: raise ValueError(f"Need at least one rep, got {reps}.")

    def one(rng: np.random.Generator) -> np.ndarray:
        return eigenvalues(sample_spec(spec, n, rng))

    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        parts = list(pool.map(one, rep_generators(seed, reps)))
    logger.info("Sampled %d eigenvalues (N=%d, reps=%d, seed=%d).", n * reps, n, reps, seed)
    return SampleBatch(spec, n, reps, seed, np.concatenate(parts))


# --- Mixed Moments ---

word_grammar = r"""
    ?start: word
    word: LETTER+
    LETTER: /X(†|\^H|\*|')?/
    %import common.WS
    %ignore WS
"""

_word_parser = Lark(word_grammar, start='start')


def parse_word(word: str) -> List[bool]:
    """
    Parses a word over X and its adjoint (written X†, X^H, X* or X') into a
    list of adjoint flags.
    """
    if not word or not word.strip(): raise ValueError("A moment word must contain at least one letter.")
    try:
        tree = _word_parser.parse(word.strip())
    except LarkError as exc:
        raise ValueError(f"Invalid moment word '{word}': {exc}") from exc
    return [len(token.value) > 1 for token in tree.children]


def mixed_moment(matrices: Sequence[np.ndarray], word: str) -> complex:
    """Average of (1/N) Tr over the batch of the word's matrix product."""
    letters = parse_word(word)
    if len(matrices) == 0: raise ValueError("Mixed moments need a nonempty batch.")
    total = 0j
    for x in matrices:
        x = np.asarray(x, dtype=complex)
        product = x.conj().T if letters[0] else x
        for adjoint in letters[1:]:
            product = product @ (x.conj().T if adjoint else x)
        total += np.trace(product) / x.shape[0]
    return complex(total / len(matrices))


# --- Histograms and Comparison ---

def histogram_density(eigs: np.ndarray, grid: GridSpec) -> DensityGrid:
    """
    Counts per cell divided by (total count x cell area), so the mass of the
    grid is the fraction of eigenvalues inside its bounds.
    """
    eigs = np.asarray(eigs, dtype=complex).ravel()
    if eigs.size == 0: raise ValueError("Cannot histogram an empty eigenvalue list.")
    counts, _, _ = np.histogram2d(eigs.real, eigs.imag, bins=[grid.x_edges, grid.y_edges])
    return DensityGrid(grid, counts / (eigs.size * grid.cell_area))


def compare_grids(a: DensityGrid, b: DensityGrid, mask: Optional[np.ndarray] = None) -> float:
    """Mean absolute difference over cells valid in both grids (and in `mask`)."""
    if a.grid != b.grid: raise ValueError("Density grids must share the same GridSpec.")
    cells = a.valid & b.valid
    if mask is not None: cells &= mask
    if not np.any(cells): return 0.0
    return float(np.mean(np.abs(a.values[cells] - b.values[cells])))


def _support_mask_coverage(theory: DensityGrid, eigs: np.ndarray, dilation: float) -> float:
    g = theory.grid
    dx, dy = (g.x_max - g.x_min) / g.nx, (g.y_max - g.y_min) / g.ny
    support = theory.valid & (theory.values > 0)
    steps = int(math.ceil(dilation / min(dx, dy)))
    if steps > 0: support = ndimage.binary_dilation(support, iterations=steps)
    i = np.floor((eigs.real - g.x_min) / dx).astype(int)
    j = np.floor((eigs.imag - g.y_min) / dy).astype(int)
    inside = (i >= 0) & (i < g.nx) & (j >= 0) & (j < g.ny)
    covered = np.zeros(eigs.size, dtype=bool)
    covered[inside] = support[i[inside], j[inside]]
    return float(np.mean(covered))


@dataclass
class ComparisonReport:
    """Agreement between a theoretical density/support and an empirical spectrum."""
    coverage: float
    l1_error: float
    mass_theory: float
    mass_empirical: float
    n: int
    reps: int
    seed: int
    geometry: str = 'plane'

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, path: PathLike) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        payload = {"schema": JSON_SCHEMA, **self.to_dict()}
        path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding='utf-8')
        return path


def compare(theory: DensityGrid, contour: Optional[ContourCurve], batch: SampleBatch,
            dilation: float = COVERAGE_DILATION, min_expected: float = MIN_EXPECTED_COUNT) -> ComparisonReport:
    """
    Coverage is the fraction of eigenvalues inside the contour grown by
    `dilation` (or inside the dilated theory support when no contour exists).
    The L1 error averages |theory - histogram| over valid cells expecting at
    least `min_expected` eigenvalues.
    """
    eigs = batch.eigenvalues
    if contour is not None and contour.branch_count:
        coverage = float(np.mean(contour.contains(eigs, dilation)))
    else:
        coverage = _support_mask_coverage(theory, eigs, dilation)
    empirical = histogram_density(eigs, theory.grid)
    expected = theory.values * theory.grid.cell_area * eigs.size
    cells = (expected >= min_expected) & theory.valid
    if np.any(cells):
        l1 = compare_grids(theory, empirical, cells)
    else:
        logger.warning("No density cell expects %g eigenvalues; the L1 error is undefined.", min_expected)
        l1 = math.nan
    report = ComparisonReport(coverage, l1, theory.total_mass(), empirical.total_mass(), batch.n, batch.reps, batch.seed)
    logger.info("Comparison: coverage=%.4f l1_error=%.4g", report.coverage, report.l1_error)
    return report


def compare_line(law: EllipticLaw, batch: SampleBatch, bins: int = LINE_BINS,
                 dilation: float = COVERAGE_DILATION) -> ComparisonReport:
    """
    Comparison for a law whose spectrum lies on a segment (|mu| = 1).

    Eigenvalues are projected on the major axis and binned over the semicircle
    support [-2 sigma, 2 sigma]; the theory in each bin is the exact bin average
    of the semicircle. Coverage counts eigenvalues within `dilation` of the
    segment.
    """
    if not law.is_hermitian_line: raise ValueError(f"Law {law} is not supported on a segment.")
    if bins < 2: raise ValueError(f"Need at least 2 bins, got {bins}.")
    eigs = batch.eigenvalues
    radius = 2.0 * law.sigma
    t, offset = law.line_coordinates(eigs)
    coverage = float(np.mean((offset <= dilation) & (np.abs(t) <= radius + dilation)))
    edges = np.linspace(-radius, radius, bins + 1)
    width = np.diff(edges)
    counts, _ = np.histogram(t, bins=edges)
    empirical = counts / (eigs.size * width)
    theory = np.diff(law.line_cdf(edges)) / width
    l1 = float(np.mean(np.abs(theory - empirical)))
    report = ComparisonReport(coverage, l1, float(np.sum(theory * width)), float(counts.sum() / eigs.size),
                              batch.n, batch.reps, batch.seed, 'line')
    logger.info("Line comparison: coverage=%.4f l1_error=%.4g", report.coverage, report.l1_error)
    return report


def compare_spec(spec: EnsembleSpec, theory: DensityGrid, contour: Optional[ContourCurve],
                 batch: SampleBatch) -> ComparisonReport:
    """Dispatches to compare_line for segment-supported laws and to compare otherwise."""
    law = spec.theory()
    if isinstance(law, EllipticLaw) and law.is_hermitian_line: return compare_line(law, batch)
    return compare(theory, contour, batch)


# --- Theory Dispatch ---

def theory_density(spec: EnsembleSpec, grid: GridSpec, options: Optional[SolverOptions] = None,
                   max_workers: Optional[int] = None) -> DensityGrid:
    """Theoretical density of the tree on the grid."""
    law = spec.theory()
    if isinstance(law, ProductLaw): return product_density_field(law, grid, options, max_workers)
    if law.is_deterministic: raise UnsupportedSpecError("A deterministic matrix has no density.")
    return density_field(law, grid, options, max_workers)


def theory_contour(spec: EnsembleSpec, phi_samples: int = 720, options: Optional[SolverOptions] = None) -> ContourCurve:
    """Theoretical support boundary of the tree."""
    law = spec.theory()
    if isinstance(law, ProductLaw): return product_contour(law, phi_samples, options)
    return elliptic_contour(law, phi_samples)

"""
qf_pipeline.py

This module runs one command of the command-line front end. It turns a
RunConfig into artifact files, maps failures to exit codes, and always
writes a run manifest (inputs, seed, versions, timing, output digests)
beside the outputs.

Exit codes:
    0  success
    1  usage, spec parse or unsupported-theory error
    2  solver non-convergence or invalid density cells (outputs flagged)
    3  I/O failure
"""

import hashlib
import json
import logging
import os
import platform
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple

import lark
import numpy as np
import scipy

from ensemble_to_spec import ensemble_to_sexpr
from qf_ensembles import (EnsembleSpec, compare_spec, mixed_moment, sample_batch, sample_matrices, theory_contour,
                          theory_density)
from qf_errors import NoConvergenceError, QFreeError, UnsupportedSpecError
from qf_greens import empirical_greens, solve_quaternionic_greens
from qf_model import JSON_SCHEMA, ContourCurve, DensityGrid, GridSpec, write_csv
from qf_newton import SolverOptions
from qf_product import ProductLaw, multiplication_law_solve
from qf_quaternion import Quaternion
from spec_to_ensemble import parse_spec

logger = logging.getLogger(__name__)

__version__ = "0.1.0"

EXIT_OK, EXIT_USAGE, EXIT_SOLVER, EXIT_IO = 0, 1, 2, 3
COMMANDS = ('density', 'contour', 'sample', 'compare', 'greens', 'moments')
SEED_ENV = 'QFREE_SEED'
DEFAULT_WORDS = ('X', 'XX', 'XX†')


def resolve_seed(seed: Optional[int]) -> int:
    """--seed, then QFREE_SEED, then 0."""
    if seed is not None: return int(seed)
    env = os.environ.get(SEED_ENV)
    if env is None or not env.strip(): return 0
    try:
        return int(env)
    except ValueError as exc:
        raise ValueError(f"{SEED_ENV} must be an integer, got '{env}'.") from exc


@dataclass
class RunConfig:
    """Parsed command-line state for one run."""
    command: str
    spec: str
    out: Path
    grid: Optional[GridSpec] = None
    phi_samples: int = 720
    n: int = 256
    reps: int = 16
    seed: int = 0
    tol: float = 1e-12
    threads: Optional[int] = None
    z: complex = 0j
    w: complex = 0j
    empirical: bool = False
    words: Tuple[str, ...] = DEFAULT_WORDS

    def __post_init__(self):
        self.out = Path(self.out)
        if self.command not in COMMANDS: raise ValueError(f"Unknown command '{self.command}'.")
        if self.phi_samples < 8: raise ValueError(f"--phi-samples must be at least 8, got {self.phi_samples}.")
        if self.n < 2: raise ValueError(f"--n must be at least 2, got {self.n}.")
        if self.reps < 1: raise ValueError(f"--reps must be positive, got {self.reps}.")
        if not self.tol > 0: raise ValueError(f"--tol must be positive, got {self.tol}.")
        if self.threads is None: self.threads = os.cpu_count() or 1
        if self.threads < 1: raise ValueError(f"--threads must be positive, got {self.threads}.")

    @property
    def options(self) -> SolverOptions:
        return SolverOptions(tol=self.tol, residual_tol=max(1e-10, 100.0 * self.tol))

    def inputs(self) -> Dict[str, object]:
        return {'command': self.command, 'spec': self.spec, 'grid': self.grid.to_text() if self.grid else None,
                'phi_samples': self.phi_samples, 'n': self.n, 'reps': self.reps, 'seed': self.seed, 'tol': self.tol,
                'z': [self.z.real, self.z.imag], 'w': [self.w.real, self.w.imag], 'empirical': self.empirical,
                'words': list(self.words)}


@dataclass
class RunResult:
    """Files written by a command and the conditions that flag them as partial."""
    outputs: List[Path] = field(default_factory=list)
    flags: List[str] = field(default_factory=list)


# --- Commands ---

def _require_grid(config: RunConfig, contour: Optional[ContourCurve]) -> GridSpec:
    if config.grid is not None: return config.grid
    if contour is None or not contour.branch_count:
        raise ValueError("--grid is required when the spec has no support contour.")
    x0, x1, y0, y1 = contour.bounding_box(0.25)
    return GridSpec(x0, x1, y0, y1, 80, 80)


def _optional_contour(spec: EnsembleSpec, config: RunConfig) -> Optional[ContourCurve]:
    try:
        return theory_contour(spec, config.phi_samples, config.options)
    except UnsupportedSpecError as exc:
        logger.info("No support contour: %s", exc)
        return None


def _flag_density(density: DensityGrid, result: RunResult):
    if density.invalid_count: result.flags.append(f"density: {density.invalid_count} invalid cells")


def run_density(spec: EnsembleSpec, config: RunConfig, result: RunResult):
    grid = _require_grid(config, _optional_contour(spec, config) if config.grid is None else None)
    density = theory_density(spec, grid, config.options, config.threads)
    result.outputs.append(density.to_csv(config.out / 'density.csv'))
    _flag_density(density, result)


def run_contour(spec: EnsembleSpec, config: RunConfig, result: RunResult):
    contour = theory_contour(spec, config.phi_samples, config.options)
    result.outputs.append(contour.to_csv(config.out / 'contour.csv'))


def run_sample(spec: EnsembleSpec, config: RunConfig, result: RunResult):
    batch = sample_batch(spec, config.n, config.reps, config.seed, config.threads)
    result.outputs.append(batch.to_csv(config.out / 'eigenvalues.csv'))


def run_compare(spec: EnsembleSpec, config: RunConfig, result: RunResult):
    contour = _optional_contour(spec, config)
    grid = _require_grid(config, contour)
    density = theory_density(spec, grid, config.options, config.threads)
    batch = sample_batch(spec, config.n, config.reps, config.seed, config.threads)
    report = compare_spec(spec, density, contour, batch)
    result.outputs.append(density.to_csv(config.out / 'density.csv'))
    if contour is not None: result.outputs.append(contour.to_csv(config.out / 'contour.csv'))
    result.outputs.append(batch.to_csv(config.out / 'eigenvalues.csv'))
    result.outputs.append(report.to_json(config.out / 'report.json'))
    _flag_density(density, result)


def _pair(value: complex) -> List[float]:
    return [value.real, value.imag]


def run_greens(spec: EnsembleSpec, config: RunConfig, result: RunResult):
    law = spec.theory()
    q = Quaternion(config.z, config.w)
    if isinstance(law, ProductLaw):
        if config.w != 0: raise UnsupportedSpecError("Product Green's functions are computed at w = 0 only.")
        sol = multiplication_law_solve(law, config.z, options=config.options)
        analytic = {'first': _pair(sol.greens), 'second': [0.0, 0.0], 'regime': sol.regime.value,
                    'residual': sol.residual}
    else:
        sol = solve_quaternionic_greens(law, q, options=config.options)
        analytic = {'first': _pair(sol.greens), 'second': _pair(sol.gamma), 'regime': sol.regime.value,
                    'residual': sol.residual}
    payload = {'schema': JSON_SCHEMA, 'q': {'z': _pair(q.first), 'w': _pair(q.second)}, 'analytic': analytic}
    if config.empirical:
        matrices = sample_matrices(spec, config.n, config.reps, config.seed, config.threads)
        emp = empirical_greens(matrices, q)
        payload['empirical'] = {'first': _pair(emp.first), 'second': _pair(emp.second), 'n': config.n,
                                'reps': config.reps, 'seed': config.seed}
    path = config.out / 'greens.json'
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2) + "\n", encoding='utf-8')
    result.outputs.append(path)


def run_moments(spec: EnsembleSpec, config: RunConfig, result: RunResult):
    matrices = sample_matrices(spec, config.n, config.reps, config.seed, config.threads)
    rows = []
    for word in config.words:
        m = mixed_moment(matrices, word)
        rows.append((word, m.real, m.imag))
    result.outputs.append(write_csv(config.out / 'moments.csv', ['word', 're', 'im'], rows))


HANDLERS: Dict[str, Callable[[EnsembleSpec, RunConfig, RunResult], None]] = {
    'density': run_density, 'contour': run_contour, 'sample': run_sample,
    'compare': run_compare, 'greens': run_greens, 'moments': run_moments,
}


# --- Manifest ---

def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def versions() -> Dict[str, str]:
    return {'qfree': __version__, 'python': platform.python_version(), 'numpy': np.__version__,
            'scipy': scipy.__version__, 'lark': lark.__version__}


def write_manifest(config: RunConfig, result: RunResult, exit_code: int, started: datetime,
                   elapsed: float, spec_sexpr: Optional[str], error: Optional[str]) -> Path:
    """Writes manifest.json beside the outputs; timestamps live here only."""
    manifest = {
        'schema': JSON_SCHEMA,
        'inputs': config.inputs(),
        'spec_canonical': spec_sexpr,
        'seed': config.seed,
        'threads': config.threads,
        'versions': versions(),
        'timing': {'started_utc': started.isoformat(), 'elapsed_s': elapsed},
        'outputs': {p.name: _sha256(p) for p in result.outputs if p.exists()},
        'flags': result.flags,
        'exit_code': exit_code,
        'error': error,
    }
    path = config.out / 'manifest.json'
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(manifest, indent=2) + "\n", encoding='utf-8')
    return path


def run(config: RunConfig) -> int:
    """
    Executes the configured command and writes its artifacts.

    Returns:
        int: The exit code (see the module docstring).
    """
    started = datetime.now(timezone.utc)
    clock = time.perf_counter()
    result = RunResult()
    spec_sexpr, error = None, None
    try:
        spec = parse_spec(config.spec)
        spec_sexpr = ensemble_to_sexpr(spec)
        logger.info("Running '%s' on %s", config.command, spec_sexpr)
        HANDLERS[config.command](spec, config, result)
        code = EXIT_SOLVER if result.flags else EXIT_OK
        for flag in result.flags: logger.warning("Partial output: %s", flag)
    except NoConvergenceError as exc:
        code, error = EXIT_SOLVER, str(exc)
        result.flags.append(f"no convergence (best residual {exc.residual:.3g})")
        logger.error("Solver did not converge: %s", exc)
    except (QFreeError, ValueError) as exc:
        code, error = EXIT_USAGE, str(exc)
        logger.error("%s", exc)
    except OSError as exc:
        code, error = EXIT_IO, str(exc)
        logger.error("I/O failure: %s", exc)
    try:
        write_manifest(config, result, code, started, time.perf_counter() - clock, spec_sexpr, error)
    except OSError as exc:
        logger.error("Could not write the run manifest: %s", exc)
        code = EXIT_IO
    return code

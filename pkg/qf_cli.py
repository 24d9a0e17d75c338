"""
qf_cli.py

Command-line front end. Each subcommand reads one ensemble spec and writes
its artifacts (CSV files with a `# qfree-csv v1` header, JSON reports and a
manifest.json) into --out.

    python qf_cli.py contour --spec @specs/one_plus_x_squared.sexp --phi-samples 720 --out runs/limacon
    python qf_cli.py density --spec ginibre --grid=-1.5,1.5,-1.5,1.5,200,200 --out runs/ginibre
    python qf_cli.py compare --spec '{"type": "gue"}' --n 512 --reps 8 --seed 7 --out runs/gue
"""

import argparse
import logging
import sys
from typing import List, NoReturn, Optional

from qf_model import GridSpec
from qf_pipeline import COMMANDS, DEFAULT_WORDS, EXIT_USAGE, RunConfig, resolve_seed, run

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


class ArgumentParser(argparse.ArgumentParser):
    """Reports usage errors with exit code 1 instead of argparse's 2."""

    def error(self, message: str) -> NoReturn:
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def complex_arg(text: str) -> complex:
    """Accepts 're,im' or a Python complex literal such as '0.5+0.2j'."""
    clean = text.replace(' ', '')
    if ',' in clean:
        parts = clean.split(',')
        if len(parts) != 2: raise argparse.ArgumentTypeError(f"expected 're,im', got '{text}'")
        try:
            return complex(float(parts[0]), float(parts[1]))
        except ValueError as exc:
            raise argparse.ArgumentTypeError(f"invalid complex number '{text}'") from exc
    try:
        return complex(clean)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"invalid complex number '{text}'") from exc


def grid_arg(text: str) -> GridSpec:
    try:
        return GridSpec.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def build_parser() -> ArgumentParser:
    p = ArgumentParser(prog='qfree', description="Quaternionic free probability for non-hermitian random matrices.")
    p.add_argument('command', choices=COMMANDS, help="What to compute.")
    p.add_argument('--spec', required=True,
                   help="Ensemble spec: JSON, an s-expression, 'gue', 'ginibre', or @file.")
    p.add_argument('--grid', type=grid_arg, default=None,
                   help="Density grid 'xmin,xmax,ymin,ymax,nx,ny' (default: around the support contour).")
    p.add_argument('--phi-samples', type=int, default=720, dest='phi_samples',
                   help="Angular samples of the support contour (default: 720).")
    p.add_argument('--n', type=int, default=256, help="Matrix size N for sampling (default: 256).")
    p.add_argument('--reps', type=int, default=16, help="Independent matrices per batch (default: 16).")
    p.add_argument('--seed', type=int, default=None, help="Master seed (default: $QFREE_SEED, else 0).")
    p.add_argument('--tol', type=float, default=1e-12, help="Solver step tolerance (default: 1e-12).")
    p.add_argument('--out', default='.', help="Output directory (default: current directory).")
    p.add_argument('--threads', type=int, default=None, help="Worker cap (default: available cores).")
    p.add_argument('--z', type=complex_arg, default=0j, help="greens: the complex point z.")
    p.add_argument('--w', type=complex_arg, default=0j, help="greens: the quaternion regulator w.")
    p.add_argument('--empirical', action='store_true', help="greens: also average block resolvents of samples.")
    p.add_argument('--words', nargs='+', default=list(DEFAULT_WORDS),
                   help="moments: words in X and X† (default: X XX XX†).")
    verbosity = p.add_mutually_exclusive_group()
    verbosity.add_argument('-v', '--verbose', action='store_true', help="Debug logging.")
    verbosity.add_argument('-q', '--quiet', action='store_true', help="Errors only.")
    return p


def parse_args(argv: Optional[List[str]] = None) -> RunConfig:
    """Builds a RunConfig from CLI arguments; invalid values exit with code 1."""
    p = build_parser()
    args = p.parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.ERROR if args.quiet else logging.INFO
    logging.basicConfig(level=level, format=LOG_FORMAT)
    try:
        return RunConfig(command=args.command, spec=args.spec, out=args.out, grid=args.grid,
                         phi_samples=args.phi_samples, n=args.n, reps=args.reps, seed=resolve_seed(args.seed),
                         tol=args.tol, threads=args.threads, z=args.z, w=args.w, empirical=args.empirical,
                         words=tuple(args.words))
    except ValueError as exc:
        p.error(str(exc))


def main(argv: Optional[List[str]] = None) -> int:
    config = parse_args(argv)
    return run(config)


if __name__ == "__main__":
    sys.exit(main())

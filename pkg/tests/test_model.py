"""
test_model.py

Tests for the shared data structures: grid parsing, density grids, the
versioned CSV writer and the chaining of contour samples into polylines.
"""

import math

import numpy as np
import pytest

from qf_model import CSV_VERSION_LINE, ContourCurve, DensityGrid, GridSpec, fmt, write_csv


def _read_csv(path):
    lines = path.read_text().splitlines()
    assert lines[0] == CSV_VERSION_LINE
    return lines[1].split(','), [line.split(',') for line in lines[2:]]


# --- Grids ---

def test_grid_parse_and_text():
    """'xmin,xmax,ymin,ymax,nx,ny' round-trips through to_text."""
    grid = GridSpec.parse("-1.5, 1.5, -1, 1, 30, 20")
    assert (grid.nx, grid.ny) == (30, 20)
    assert GridSpec.parse(grid.to_text()) == grid
    assert grid.cell_area == pytest.approx(3.0 * 2.0 / 600)
    assert grid.centers().shape == (30, 20)
    assert grid.x_centers[0] == pytest.approx(-1.45)


@pytest.mark.parametrize("text", ["0,1,0,1,10", "1,0,0,1,10,10", "0,1,0,1,0,10", "a,1,0,1,10,10"],
                         ids=["too few fields", "empty x range", "no cells", "not a number"])
def test_grid_parse_errors(text):
    """Malformed grids are rejected with a ValueError."""
    with pytest.raises(ValueError):
        GridSpec.parse(text)


def test_density_mass_and_validity():
    """Mass sums valid cells only; value_at finds the containing cell."""
    grid = GridSpec(0, 2, 0, 2, 2, 2)
    values = np.array([[1.0, 2.0], [3.0, 4.0]])
    density = DensityGrid(grid, values, valid=np.array([[True, True], [True, False]]))
    assert density.invalid_count == 1
    assert density.total_mass() == pytest.approx(6.0)
    assert density.value_at(1.5 + 0.5j) == 3.0
    with pytest.raises(ValueError, match="shape"):
        DensityGrid(grid, np.zeros((3, 2)))


# --- CSV ---

def test_csv_header_and_precision(tmp_path):
    """Files start with the version line and floats keep 17 significant digits."""
    path = write_csv(tmp_path / "sub" / "x.csv", ["a", "b"], [(0.1, 1), (1 / 3, 2)])
    header, rows = _read_csv(path)
    assert header == ["a", "b"]
    assert float(rows[1][0]) == 1 / 3
    assert fmt(0.1) == "0.10000000000000001"


def test_density_csv(tmp_path):
    """One row per cell with re, im, rho, valid."""
    grid = GridSpec(-1, 1, -1, 1, 2, 3)
    path = DensityGrid(grid, np.ones((2, 3))).to_csv(tmp_path / "density.csv")
    header, rows = _read_csv(path)
    assert header == ["re", "im", "rho", "valid"]
    assert len(rows) == 6
    assert all(row[3] == "1" for row in rows)


# --- Contours ---

def test_circle_chains_into_one_branch():
    """A root per angle at constant radius gives one closed branch."""
    phis = np.linspace(0, 2 * math.pi, 72, endpoint=False)
    curve = ContourCurve.from_samples(phis, [[1.0]] * 72)
    assert curve.branch_count == 1
    assert np.allclose(np.abs(curve.points(0)), 1.0)
    inside = curve.contains(np.array([0.0, 0.5j, 1.2, 1.02]))
    assert inside.tolist() == [True, True, False, False]
    assert curve.contains(np.array([1.02]), dilation=0.05).tolist() == [True]
    assert curve.bounding_box(0.1) == pytest.approx((-1.1, 1.1, -1.1, 1.1), abs=1e-2)


def test_limacon_chains_into_two_loops():
    """r = 2cos(phi) + 1 and 2cos(phi) - 1 sampled per angle chain into the outer and inner loops."""
    phis = np.linspace(0, 2 * math.pi, 360, endpoint=False)
    roots = [[r for r in (2 * math.cos(p) - 1, 2 * math.cos(p) + 1) if r > 0] for p in phis]
    curve = ContourCurve.from_samples(phis, roots)
    assert curve.branch_count == 2
    radii = sorted(max(np.abs(curve.points(k))) for k in range(2))
    assert radii == pytest.approx([1.0, 3.0])
    assert curve.contains(np.array([2.0, 0.5, -0.5])).tolist() == [True, True, False]


def test_contour_csv_rows(tmp_path):
    """Rows carry branch, phi, r and the cartesian point."""
    curve = ContourCurve.from_points([np.array([1.0, 1j, -1.0])])
    header, rows = _read_csv(curve.to_csv(tmp_path / "contour.csv"))
    assert header == ["branch", "phi", "r", "re", "im"]
    assert [int(r[0]) for r in rows] == [0, 0, 0]
    assert float(rows[1][2]) == pytest.approx(1.0)
    assert float(rows[1][4]) == pytest.approx(1.0)


def test_empty_contour():
    """No branches: nothing is inside and the bounding box is the unit square."""
    curve = ContourCurve([])
    assert curve.branch_count == 0
    assert curve.contains(np.array([0j])).tolist() == [False]
    assert curve.bounding_box() == (-1.0, 1.0, -1.0, 1.0)

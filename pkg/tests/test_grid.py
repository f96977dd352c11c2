"""Periodic grid algebra: spectral operators, Coulomb convolution, file IO."""

import numpy as np
import pytest

from polaronlab.grid import (
    Field,
    FieldIOError,
    Grid3,
    GridMismatchError,
    apply_laplacian,
    coulomb_convolve,
    fourier_coefficient,
    gaussian,
    inner,
    load_array,
    load_field,
    plane_wave,
    save_array,
    save_field,
    shift_field,
)


@pytest.fixture
def grid():
    return Grid3(16, 4 * np.pi)


def test_grid_validation():
    with pytest.raises(ValueError):
        Grid3(7, 10.0)  # odd
    with pytest.raises(ValueError):
        Grid3(2, 10.0)  # too small
    with pytest.raises(ValueError):
        Grid3(8, -1.0)


def test_cell_volume_and_axes(grid):
    assert np.isclose(grid.cell_volume, (grid.box_length / grid.n) ** 3)
    assert grid.axis.shape == (grid.n,)
    # axis centered around 0 with step L/n
    assert np.isclose(np.diff(grid.axis).min(), grid.box_length / grid.n)


def test_plane_wave_is_laplacian_eigenfunction(grid):
    k = np.array([0.5, -1.0, 0.5])
    pw = plane_wave(grid, k)
    lap = apply_laplacian(pw)
    expected = float(np.dot(k, k))
    assert np.allclose(lap.values, expected * pw.values, atol=1e-12)


def test_plane_waves_orthonormal(grid):
    a = plane_wave(grid, [0.5, 0, 0])
    b = plane_wave(grid, [1.0, 0, 0])
    assert abs(inner(a, a) - grid.box_length**3) < 1e-8
    assert abs(inner(a, b)) < 1e-8


def test_gaussian_normalized(grid):
    g = gaussian(grid, 1.0)
    assert abs(g.norm() - 1.0) < 1e-10


def test_coulomb_convolution_matches_free_space():
    # for a localized charge the periodic result reproduces the open-space
    # potential at the origin: integral of rho/|x| = sqrt(2/pi)/sigma
    grid = Grid3(32, 24.0)
    sigma = 1.5
    phi = gaussian(grid, sigma)
    rho = Field(np.abs(phi.values) ** 2, grid)
    V = coulomb_convolve(rho)
    center = np.unravel_index(np.argmax(rho.values.real), grid.shape)
    analytic = np.sqrt(2.0 / np.pi) / sigma
    assert abs(V.values[center].real - analytic) / analytic < 1e-2


def test_fourier_coefficient_of_plane_wave(grid):
    k = np.array([0.5, 0.5, 0])
    f = plane_wave(grid, k)
    # continuum convention: the matching wave integrates to the box volume
    assert abs(fourier_coefficient(f, k) - grid.box_length**3) < 1e-8
    assert abs(fourier_coefficient(f, [1.0, 0, 0])) < 1e-8


def test_shift_field_translates(grid):
    g = gaussian(grid, 1.0)
    d = np.array([grid.box_length / grid.n, 0, 0])  # one lattice step
    shifted = shift_field(g, d)
    assert np.allclose(np.roll(g.values, 1, axis=0), shifted.values, atol=1e-10)


def test_field_arithmetic_grid_mismatch(grid):
    other = Grid3(16, 8 * np.pi)
    with pytest.raises(GridMismatchError):
        inner(gaussian(grid, 1.0), gaussian(other, 1.0))


def test_pfld_roundtrip_field(grid, tmp_path):
    g = gaussian(grid, 1.0)
    path = str(tmp_path / "f.pfld")
    save_field(g, path, tag="phi0")
    back = load_field(path)
    assert back.grid == grid
    assert np.array_equal(back.values, g.values)


def test_pfld_roundtrip_array(tmp_path):
    arr = np.arange(12, dtype=np.complex128).reshape(3, 4) * (1 + 2j)
    path = str(tmp_path / "a.pfld")
    save_array(arr, path, tag="kernel-K")
    back, meta = load_array(path)
    assert np.array_equal(back, arr)
    assert meta["tag"] == "kernel-K"
    assert meta["dtype"] == "c128"


def test_pfld_truncated_payload_rejected(grid, tmp_path):
    path = str(tmp_path / "t.pfld")
    save_field(gaussian(grid, 1.0), path)
    raw = open(path, "rb").read()
    with open(path, "wb") as fh:
        fh.write(raw[:-16])
    with pytest.raises(FieldIOError):
        load_field(path)


def test_pfld_grid_mismatch_rejected(grid, tmp_path):
    path = str(tmp_path / "g.pfld")
    save_field(gaussian(grid, 1.0), path)
    with pytest.raises((FieldIOError, GridMismatchError)):
        load_field(path, grid=Grid3(16, 2 * np.pi))

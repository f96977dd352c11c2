"""Mode-set construction, parity closure, and presets."""

import numpy as np
import pytest

from polaronlab.grid import Grid3
from polaronlab.modes import ModeSet, axis_pair, mode_preset


def test_axis_pair_and_parity():
    ks, ws = axis_pair(0.5, 0, 2.0)
    ms = ModeSet(ks, ws)
    assert ms.M == 2
    assert list(ms.parity) == [1, 0]
    assert np.allclose(ms.coupling_constants, 1.0 / np.pi)


def test_rejects_zero_mode():
    with pytest.raises(ValueError):
        ModeSet(np.array([[0.0, 0, 0], [0.5, 0, 0]]), np.array([1.0, 1.0]))


def test_rejects_unpaired_mode():
    with pytest.raises(ValueError, match="parity"):
        ModeSet(np.array([[0.5, 0, 0], [1.0, 0, 0]]), np.array([1.0, 1.0]))


def test_positive_weights_required():
    ks, _ = axis_pair(0.5, 0, 1.0)
    with pytest.raises(ValueError):
        ModeSet(ks, np.array([1.0, -1.0]))


def test_commensurability_check():
    ms = mode_preset("pair-x", 4 * np.pi)
    ms.check_commensurate(Grid3(8, 4 * np.pi))
    with pytest.raises(ValueError):
        ms.check_commensurate(Grid3(8, 10.0))


def test_presets_shapes():
    for name, M in [("pair-x", 2), ("quad-xy", 4), ("hex-xyz", 6)]:
        ms = mode_preset(name, 4 * np.pi)
        assert ms.M == M
        assert np.allclose(np.linalg.norm(ms.k_vectors, axis=1), 0.5)


def test_preset_requires_commensurate_box():
    with pytest.raises(ValueError):
        mode_preset("pair-x", 10.0)
    with pytest.raises(ValueError):
        mode_preset("no-such-preset", 4 * np.pi)


def test_coupling_field_amplitude():
    grid = Grid3(8, 4 * np.pi)
    ms = mode_preset("pair-x", grid.box_length)
    g = ms.coupling_field(grid, 0)
    assert np.allclose(np.abs(g.values), 1.0 / np.pi)


def test_dict_roundtrip():
    ms = mode_preset("quad-xy", 4 * np.pi)
    back = ModeSet.from_dict(ms.as_dict())
    assert np.array_equal(back.k_vectors, ms.k_vectors)
    assert np.array_equal(back.weights, ms.weights)

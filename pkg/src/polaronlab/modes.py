"""Finite phonon mode sets: momentum quadrature points with parity closure."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import Field, Grid3, plane_wave


@dataclass(frozen=True)
class ModeSet:
    """Quadrature {k_i, w_i} over nonzero reciprocal vectors, closed under k -> -k."""

    k_vectors: np.ndarray  # (M, 3)
    weights: np.ndarray  # (M,)

    def __post_init__(self):
        k = np.ascontiguousarray(np.asarray(self.k_vectors, dtype=float))
        w = np.ascontiguousarray(np.asarray(self.weights, dtype=float))
        object.__setattr__(self, "k_vectors", k)
        object.__setattr__(self, "weights", w)
        if k.ndim != 2 or k.shape[1] != 3:
            raise ValueError("k_vectors must have shape (M, 3)")
        if w.shape != (k.shape[0],):
            raise ValueError("weights must have shape (M,)")
        if np.any(w <= 0):
            raise ValueError("weights must be positive")
        norms = np.linalg.norm(k, axis=1)
        if np.any(norms < 1e-12):
            raise ValueError("k = 0 is not allowed in a ModeSet")
        object.__setattr__(self, "parity", self._build_parity())

    def _build_parity(self) -> np.ndarray:
        k = self.k_vectors
        par = np.full(k.shape[0], -1, dtype=int)
        for i in range(k.shape[0]):
            hits = np.where(np.all(np.abs(k + k[i]) < 1e-10, axis=1))[0]
            if hits.size != 1:
                raise ValueError(f"mode set is not parity-closed at k = {k[i]}")
            par[i] = hits[0]
        if not np.array_equal(par[par], np.arange(k.shape[0])):
            raise ValueError("parity map is not an involution")
        return par

    @property
    def M(self) -> int:
        return self.k_vectors.shape[0]

    @property
    def coupling_constants(self) -> np.ndarray:
        """c_i = 1 / (2 pi |k_i|), the amplitude of G_x(k_i)."""
        return 1.0 / (2.0 * np.pi * np.linalg.norm(self.k_vectors, axis=1))

    def check_commensurate(self, grid: Grid3):
        for k in self.k_vectors:
            if not grid.is_commensurate(k):
                raise ValueError(f"mode k = {k} is not commensurate with the grid")

    def coupling_field(self, grid: Grid3, i: int) -> Field:
        """G_x(k_i) = exp(-i k_i . x) / (2 pi |k_i|) as a field over x."""
        k = self.k_vectors[i]
        pw = plane_wave(grid, k)
        return Field(np.conj(pw.values) / (2.0 * np.pi * np.linalg.norm(k)), grid)

    def as_dict(self) -> dict:
        return {
            "k_vectors": self.k_vectors.tolist(),
            "weights": self.weights.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModeSet":
        return cls(np.asarray(d["k_vectors"]), np.asarray(d["weights"]))


def axis_pair(k: float, axis: int, weight: float):
    """A +-k pair along one coordinate axis."""
    v = np.zeros(3)
    v[axis] = k
    return np.stack([v, -v]), np.array([weight, weight])


def mode_preset(name: str, box_length: float) -> ModeSet:
    """Named binding presets; |k| in {0.5, 1.0} requires box_length = 4 pi n."""
    base = 2.0 * np.pi / box_length
    if abs(base * round(0.5 / base) - 0.5) > 1e-9:
        raise ValueError(
            f"box_length {box_length} is not commensurate with |k| = 0.5 modes"
        )
    if name == "pair-x":
        ks, ws = axis_pair(0.5, 0, 16.0)
        return ModeSet(ks, ws)
    if name == "quad-xy":
        kx, wx = axis_pair(0.5, 0, 16.0)
        ky, wy = axis_pair(0.5, 1, 16.0)
        return ModeSet(np.vstack([kx, ky]), np.concatenate([wx, wy]))
    if name == "hex-xyz":
        parts = [axis_pair(0.5, a, 16.0) for a in range(3)]
        return ModeSet(
            np.vstack([p[0] for p in parts]),
            np.concatenate([p[1] for p in parts]),
        )
    raise ValueError(f"unknown mode preset {name!r}")

"""Electron-sector operator algebra: h^phi0, spectral gap, restricted
resolvent, and the quadratic-kernel matrices K, G with the constant eps."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np
from scipy.sparse.linalg import LinearOperator, cg, eigsh

from .grid import Field, Grid3, inner, load_array, plane_wave, save_array
from .modes import ModeSet


class ResolventError(RuntimeError):
    pass


class GapError(RuntimeError):
    pass


def apply_h(sol, f: Field) -> Field:
    """h^{phi0} f = p^2 f + V_eff f."""
    if f.grid != sol.grid:
        raise ValueError("field grid does not match the solution grid")
    fhat = np.fft.fftn(f.values)
    lap = np.fft.ifftn(sol.grid.ksq * fhat)
    return Field(lap + sol.V_eff.values * f.values, f.grid)


def _real_matvec(V_vals: np.ndarray, grid: Grid3):
    ksq = grid.ksq
    Vr = V_vals.real

    def mv(x):
        f = x.reshape(grid.shape)
        out = np.fft.ifftn(ksq * np.fft.fftn(f)).real + Vr * f
        return out.ravel()

    return mv


def _precond(grid: Grid3, shift: float):
    ksq = grid.ksq

    def mv(x):
        f = x.reshape(grid.shape)
        return np.fft.ifftn(np.fft.fftn(f) / (ksq + shift)).real.ravel()

    return mv


def lowest_eigenpairs(V: Field, grid: Grid3, k: int = 2, tol: float = 1e-11, v0=None):
    """Lowest k eigenpairs of p^2 + V via Lanczos (real symmetric matvec).

    Returns (eigenvalues, eigenfields) with eigenfields L2-normalized real
    arrays of grid shape.
    """
    n = grid.size
    op = LinearOperator((n, n), matvec=_real_matvec(V.values, grid), dtype=np.float64)
    if v0 is None:
        # fixed start vector keeps reruns bitwise deterministic
        v0 = np.random.default_rng(12345).standard_normal(n)
    try:
        evals, evecs = eigsh(op, k=k, which="SA", tol=tol, v0=v0, maxiter=5000)
    except Exception as exc:  # noqa: BLE001 - surface solver failure with context
        raise ResolventError(f"eigensolver failed: {exc}") from exc
    order = np.argsort(evals)
    evals = evals[order]
    evecs = evecs[:, order]
    fields = []
    scale = 1.0 / np.sqrt(grid.cell_volume)
    for j in range(k):
        fields.append(evecs[:, j].reshape(grid.shape) * scale)
    return evals, fields


def spectral_gap(sol, tol: float = 1e-11):
    """Two lowest eigenvalues of h^{phi0}; asserts lambda0 matches the stored
    multiplier and that the gap is strictly positive."""
    evals, _ = lowest_eigenpairs(sol.V_eff, sol.grid, k=2, tol=tol)
    lam0, lam1 = float(evals[0]), float(evals[1])
    if abs(lam0 - sol.lam) > 1e-6:
        raise GapError(
            f"lowest eigenvalue {lam0} disagrees with stored lambda {sol.lam}"
        )
    gap = lam1 - lam0
    if gap <= 0:
        raise GapError(f"spectral gap is not positive: {gap}")
    return {"lambda0": lam0, "lambda1": lam1, "gap": gap}


@dataclass
class ResolventHandle:
    """Applies R = Q (h - lambda)^{-1} Q by projected conjugate gradients."""

    sol: "object"
    gap: float
    cg_tol: float = 1e-11
    cg_max_iter: int = 5000

    def __post_init__(self):
        if not self.gap > 0:
            raise GapError("resolvent requires a positive spectral gap")
        grid = self.sol.grid
        self._phi = self.sol.phi0.values.real.ravel() * np.sqrt(grid.cell_volume)
        # unit l2 vector representing phi0
        self._phi = self._phi / np.linalg.norm(self._phi)
        self._hmv = _real_matvec(self.sol.V_eff.values, grid)
        self._pre = _precond(grid, max(self.gap, 1e-3))
        self._lam = self.sol.lam

    def _project(self, x):
        return x - self._phi * np.dot(self._phi, x)

    def _amv(self, x):
        # Q (h - lambda) Q + P : positive definite on the whole space
        qx = self._project(x)
        y = self._project(self._hmv(qx) - self._lam * qx)
        return y + self._phi * np.dot(self._phi, x)

    def _solve_real(self, b):
        grid = self.sol.grid
        n = grid.size
        qb = self._project(b)
        op = LinearOperator((n, n), matvec=self._amv, dtype=np.float64)
        pre = LinearOperator(
            (n, n), matvec=lambda x: self._project(self._pre(self._project(x))),
            dtype=np.float64,
        )
        x, info = cg(op, qb, rtol=0.0, atol=self.cg_tol * max(1.0, np.linalg.norm(qb)),
                     maxiter=self.cg_max_iter, M=pre)
        resid = np.linalg.norm(self._amv(x) - qb)
        if info != 0 or resid > 100 * self.cg_tol * max(1.0, np.linalg.norm(qb)):
            raise ResolventError(
                f"resolvent CG stagnated (info={info}, residual={resid:.3e})"
            )
        return self._project(x)

    def apply(self, v: Field) -> Field:
        """u = R v: u is orthogonal to phi0 and (h - lambda) u = Q v."""
        grid = self.sol.grid
        if v.grid != grid:
            raise ValueError("field grid mismatch in resolvent apply")
        scale = np.sqrt(grid.cell_volume)
        br = v.values.real.ravel() * scale
        bi = v.values.imag.ravel() * scale
        xr = self._solve_real(br)
        xi = self._solve_real(bi) if np.any(bi) else np.zeros_like(xr)
        out = (xr + 1j * xi).reshape(grid.shape) / scale
        return Field(out, grid)

    def project_out_ground(self, v: Field) -> Field:
        """Q v = v - <phi0, v> phi0."""
        c = inner(self.sol.phi0, v)
        return Field(v.values - c * self.sol.phi0.values, v.grid)


@dataclass
class KernelPair:
    """Quadrature-embedded kernel matrices and the normal-ordering constant.

    K[i, j] = sqrt(w_i w_j) * K(k_i, k_j), likewise for G;
    eps = Tr(G) / 2.  diag_rayleigh stores an independently computed
    route to the diagonal resolvent matrix elements for cross-checks.
    """

    K: np.ndarray
    G: np.ndarray
    epsilon: float
    modes: ModeSet
    t_table: np.ndarray  # t[a, b] = <phi0, e^{-i k_a x} R e^{-i k_b x} phi0>
    diag_rayleigh: np.ndarray  # <u_i, (h - lambda) u_i> with u_i = R e^{-ik_i x}phi0

    def check(self, tol: float = 1e-10):
        if np.max(np.abs(self.K - self.K.T)) > tol:
            raise ValueError("K is not symmetric")
        if np.max(np.abs(self.G - self.G.conj().T)) > tol:
            raise ValueError("G is not Hermitian")
        if abs(self.epsilon - 0.5 * np.trace(self.G).real) > tol:
            raise ValueError("epsilon is not Tr(G)/2")

    def save(self, outdir: str):
        os.makedirs(outdir, exist_ok=True)
        save_array(self.K, os.path.join(outdir, "K.pfld"), tag="kernel-K")
        save_array(self.G, os.path.join(outdir, "G.pfld"), tag="kernel-G")
        save_array(self.t_table, os.path.join(outdir, "t_table.pfld"), tag="t-table")
        save_array(
            self.diag_rayleigh,
            os.path.join(outdir, "diag_rayleigh.pfld"),
            tag="diag-rayleigh",
        )
        meta = {"epsilon": self.epsilon, "modes": self.modes.as_dict()}
        tmp = os.path.join(outdir, "kernels.json.tmp")
        with open(tmp, "w") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)
        os.replace(tmp, os.path.join(outdir, "kernels.json"))

    @classmethod
    def load(cls, outdir: str) -> "KernelPair":
        with open(os.path.join(outdir, "kernels.json")) as fh:
            meta = json.load(fh)
        K, _ = load_array(os.path.join(outdir, "K.pfld"))
        G, _ = load_array(os.path.join(outdir, "G.pfld"))
        t, _ = load_array(os.path.join(outdir, "t_table.pfld"))
        d, _ = load_array(os.path.join(outdir, "diag_rayleigh.pfld"))
        return cls(
            K=K,
            G=G,
            epsilon=meta["epsilon"],
            modes=ModeSet.from_dict(meta["modes"]),
            t_table=t,
            diag_rayleigh=d,
        )


def build_kernels(sol, modes: ModeSet, rh: ResolventHandle) -> KernelPair:
    """One resolvent solve per mode, then assemble K, G and eps.

    t(a, b) = <phi0, e^{-i k_a x} R e^{-i k_b x} phi0>;
    K(k_i,k_j) = c_i c_j (t(i,j) + t(j,i)),
    G(k_i,k_j) = c_i c_j (t(par(i),j) + t(i,par(j))).
    """
    modes.check_commensurate(sol.grid)
    grid = sol.grid
    M = modes.M
    c = modes.coupling_constants
    w = modes.weights
    par = modes.parity
    phi = sol.phi0

    u = []
    diag_rayleigh = np.zeros(M)
    for j in range(M):
        pw = plane_wave(grid, modes.k_vectors[j])
        src = Field(np.conj(pw.values) * phi.values, grid)  # e^{-i k_j x} phi0
        uj = rh.apply(src)
        u.append(uj)
        # independent Rayleigh route: ||R^{1/2} src||^2 = <u_j, (h-lambda) u_j>
        hu = apply_h(sol, uj)
        diag_rayleigh[j] = inner(uj, Field(hu.values - sol.lam * uj.values, grid)).real

    t = np.zeros((M, M), dtype=np.complex128)
    for a in range(M):
        pw = plane_wave(grid, modes.k_vectors[a])
        bra = Field(pw.values * phi.values, grid)  # conj gives e^{-i k_a x} phi0
        for b in range(M):
            t[a, b] = inner(bra, u[b])

    cc = np.outer(c, c)
    sw = np.sqrt(np.outer(w, w))
    Kmat = sw * cc * (t + t.T)
    Gmat = sw * cc * (t[par, :] + t[:, par])
    eps = 0.5 * float(np.trace(Gmat).real)
    kp = KernelPair(
        K=Kmat,
        G=Gmat,
        epsilon=eps,
        modes=modes,
        t_table=t,
        diag_rayleigh=diag_rayleigh,
    )
    kp.check(tol=1e-8)
    return kp

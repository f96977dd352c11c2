"""Brute-force ground truth on a truncated Fock space.

Occupation-basis enumeration over M modes with per-mode cutoff n_max,
sparse ladder operators, the quadratic effective Hamiltonian in two
independent assemblies, the displaced-frame coupled Hamiltonian, and a
Lanczos short-step propagator with unitarity/energy monitoring.

The creation operator annihilates top-occupation states (hard
truncation); runs are expected to monitor the top-level population.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .grid import Field, Grid3
from .pekar import DiscretePekarSolution, delta_g_field
from .resolvent import KernelPair

DEFAULT_DIM_CAP = 200_000


class FockDimensionError(ValueError):
    pass


class EvolutionError(RuntimeError):
    pass


@dataclass(frozen=True)
class FockSpace:
    """Truncated bosonic Fock space: occupations (n_1..n_M), n_i <= n_max."""

    M: int
    n_max: int

    def __post_init__(self):
        if self.M < 1 or self.n_max < 0:
            raise ValueError("need M >= 1 and n_max >= 0")
        if self.dim > DEFAULT_DIM_CAP:
            raise FockDimensionError(
                f"dim {(self.n_max + 1)}^{self.M} exceeds cap {DEFAULT_DIM_CAP}"
            )
        occs = np.array(
            list(itertools.product(range(self.n_max + 1), repeat=self.M)), dtype=np.int64
        )
        object.__setattr__(self, "occupations", occs)

    @property
    def dim(self) -> int:
        return (self.n_max + 1) ** self.M

    def index(self, occ) -> int:
        """Mixed-radix index of an occupation tuple (inverse of occupations[i])."""
        idx = 0
        for n in occ:
            if not 0 <= n <= self.n_max:
                raise ValueError(f"occupation {occ} outside cutoff")
            idx = idx * (self.n_max + 1) + int(n)
        return idx

    @property
    def vacuum_index(self) -> int:
        return 0

    def vacuum(self) -> np.ndarray:
        psi = np.zeros(self.dim, dtype=np.complex128)
        psi[self.vacuum_index] = 1.0
        return psi


def ladder(i: int, fs: FockSpace) -> sp.csr_matrix:
    """Annihilation operator a_i as a sparse matrix (a^dag = transpose)."""
    if not 0 <= i < fs.M:
        raise IndexError(f"mode index {i} out of range for M = {fs.M}")
    occ = fs.occupations
    src = np.where(occ[:, i] > 0)[0]
    n = occ[src, i]
    stride = (fs.n_max + 1) ** (fs.M - 1 - i)
    dst = src - stride  # occupation n_i decreases by one
    data = np.sqrt(n.astype(np.float64))
    return sp.csr_matrix((data, (dst, src)), shape=(fs.dim, fs.dim))


def number_operator(fs: FockSpace) -> sp.csr_matrix:
    return sp.diags(fs.occupations.sum(axis=1).astype(np.float64)).tocsr()


def build_quadratic_hamiltonian(kp: KernelPair, fs: FockSpace) -> sp.csr_matrix:
    """H = dGamma(1 - G) - (1/2) sum_ij (K_ij a_i^dag a_j^dag + conj(K_ij) a_i a_j)."""
    M = fs.M
    if kp.K.shape != (M, M):
        raise ValueError("kernel size does not match the Fock space mode count")
    a = [ladder(i, fs) for i in range(M)]
    ad = [op.conj().T.tocsr() for op in a]
    H = number_operator(fs).astype(np.complex128)
    for i in range(M):
        for j in range(M):
            Gij = kp.G[i, j]
            Kij = kp.K[i, j]
            if Gij != 0:
                H = H - Gij * (ad[i] @ a[j])
            if Kij != 0:
                H = H - 0.5 * (Kij * (ad[i] @ ad[j]) + np.conj(Kij) * (a[i] @ a[j]))
    H = H.tocsr()
    defect = abs(H - H.conj().T).max()
    if defect > 1e-10:
        raise ValueError(f"quadratic Hamiltonian Hermiticity defect {defect:.3e}")
    return H


def build_effective_operator_direct(kp: KernelPair, fs: FockSpace) -> sp.csr_matrix:
    """Independent route to N - A + eps from the raw resolvent table.

    Assembles A directly from the four ladder products (including the
    un-normal-ordered a a^dag term) in an enlarged space with cutoff
    n_max + 1, then restricts to the requested cutoff so the truncation
    does not bite the reordering.  Equality with
    build_quadratic_hamiltonian is the discrete normal-ordering identity.
    """
    modes = kp.modes
    M = fs.M
    par = modes.parity
    c = modes.coupling_constants
    w = modes.weights
    t = kp.t_table
    big = FockSpace(M, fs.n_max + 1)
    a = [ladder(i, big) for i in range(M)]
    ad = [op.conj().T.tocsr() for op in a]
    A = sp.csr_matrix((big.dim, big.dim), dtype=np.complex128)
    for i in range(M):
        for j in range(M):
            pref = np.sqrt(w[i] * w[j]) * c[i] * c[j]
            A = A + pref * (
                t[par[i], par[j]] * (a[i] @ a[j])
                + t[i, j] * (ad[i] @ ad[j])
                + t[par[i], j] * (a[i] @ ad[j])
                + t[i, par[j]] * (ad[i] @ a[j])
            )
    H_big = number_operator(big).astype(np.complex128) - A + kp.epsilon * sp.identity(
        big.dim, format="csr"
    )
    # embed indices of the small space inside the enlarged one
    keep = np.array([big.index(occ) for occ in fs.occupations])
    return H_big.tocsr()[np.ix_(keep, keep)].tocsr()


# ---------------------------------------------------------------------------
# displaced-frame coupled Hamiltonian
# ---------------------------------------------------------------------------


@dataclass
class CoupledHamiltonian:
    """Matrix-free  (h - lambda) + alpha^-2 N + alpha^-1 phi(delta G)  on
    electron-grid x Fock product states, stored as (grid_size, fock_dim)."""

    dsol: DiscretePekarSolution
    fs: FockSpace
    alpha: float

    def __post_init__(self):
        grid = self.dsol.grid
        modes = self.dsol.modes
        self._grid = grid
        self._ksq = grid.ksq
        self._vshift = self.dsol.V_eff.values.real - self.dsol.lam
        self._ndiag = self.fs.occupations.sum(axis=1).astype(np.float64)
        # dense transposed ladder matrices: the Fock factor is small, so
        # psi @ a.T through BLAS beats sparse products on (grid, fock) arrays
        self._aT = [ladder(i, self.fs).toarray().T.copy() for i in range(modes.M)]
        self._adT = [m.T.conj().copy() for m in self._aT]  # (a^dag)^T = conj(a)
        self._dg = [
            np.sqrt(modes.weights[i]) * delta_g_field(self.dsol, i).values
            for i in range(modes.M)
        ]

    @property
    def shape(self):
        return (self._grid.size, self.fs.dim)

    def apply(self, psi: np.ndarray) -> np.ndarray:
        """psi has shape (grid_size, fock_dim)."""
        grid = self._grid
        n = grid.n
        nf = self.fs.dim
        cube = psi.reshape(n, n, n, nf)
        # electron part: spectral Laplacian + local potential, per Fock column
        lap = np.fft.ifftn(
            self._ksq[..., None] * np.fft.fftn(cube, axes=(0, 1, 2)), axes=(0, 1, 2)
        )
        out = lap + self._vshift[..., None] * cube
        out = out.reshape(grid.size, nf)
        # phonon number
        out += (self._ndiag[None, :] / self.alpha**2) * psi
        # coupling: alpha^-1 sum_i sqrt(w_i) (conj(dG_i) a_i + dG_i a_i^dag)
        flatdg = [d.reshape(grid.size, 1) for d in self._dg]
        for i in range(len(self._aT)):
            out += np.conj(flatdg[i]) * (psi @ self._aT[i]) / self.alpha
            out += flatdg[i] * (psi @ self._adT[i]) / self.alpha
        return out

    def expectation(self, psi: np.ndarray) -> float:
        return float(np.vdot(psi, self.apply(psi)).real)


def product_state(phi: Field, eta: np.ndarray) -> np.ndarray:
    """phi (x) eta as a (grid_size, fock_dim) array, normalized in the
    product norm (grid measure on the electron factor)."""
    el = phi.values.ravel() * np.sqrt(phi.grid.cell_volume)
    return np.outer(el, eta)


# ---------------------------------------------------------------------------
# Lanczos propagator
# ---------------------------------------------------------------------------


def _lanczos_step(apply_h, psi: np.ndarray, dt: float, m: int) -> np.ndarray:
    """One step of exp(-i dt H) psi via an m-dimensional Krylov space."""
    shape = psi.shape
    v = psi.ravel()
    beta0 = np.linalg.norm(v)
    V = np.zeros((m, v.size), dtype=np.complex128)
    alpha = np.zeros(m)
    beta = np.zeros(m)
    V[0] = v / beta0
    used = m
    for j in range(m):
        w = apply_h(V[j].reshape(shape)).ravel()
        if j > 0:
            w -= beta[j - 1] * V[j - 1]
        alpha[j] = np.vdot(V[j], w).real
        w -= alpha[j] * V[j]
        # full reorthogonalization keeps long trajectories clean
        w -= V[: j + 1].T @ (V[: j + 1].conj() @ w)
        b = np.linalg.norm(w)
        if j + 1 < m:
            beta[j] = b
            if b < 1e-14:
                used = j + 1
                break
            V[j + 1] = w / b
    T = np.diag(alpha[:used]) + np.diag(beta[: used - 1], 1) + np.diag(beta[: used - 1], -1)
    evals, evecs = np.linalg.eigh(T)
    coeff = evecs @ (np.exp(-1j * dt * evals) * evecs[0].conj())
    out = beta0 * (coeff @ V[:used])
    return out.reshape(shape)


def evolve_state(
    apply_h,
    psi0: np.ndarray,
    t: float,
    dt: float = 0.5,
    krylov_dim: int = 32,
    norm_tol: float = 1e-9,
    energy_tol: float = 1e-8,
    callback=None,
) -> np.ndarray:
    """Propagate exp(-i t H) psi0 in short Lanczos steps.

    Raises if the accumulated norm drift exceeds norm_tol or the relative
    energy drift exceeds energy_tol.  ``callback(t, psi)`` fires after
    every step when given.
    """
    nrm0 = np.linalg.norm(psi0)
    if abs(nrm0 - 1.0) > 1e-9:
        raise ValueError(f"initial state norm {nrm0}, expected 1")
    nsteps = max(1, int(np.ceil(abs(t) / dt)))
    hstep = t / nsteps
    psi = psi0.astype(np.complex128).copy()
    e0 = np.vdot(psi, apply_h(psi)).real
    escale = max(1.0, abs(e0))
    for k in range(nsteps):
        psi = _lanczos_step(apply_h, psi, hstep, krylov_dim)
        drift = abs(np.linalg.norm(psi) - 1.0)
        if drift > norm_tol:
            raise EvolutionError(
                f"norm drift {drift:.3e} at step {k + 1}; reduce dt below {dt}"
            )
        if callback is not None:
            callback((k + 1) * hstep, psi)
    e1 = np.vdot(psi, apply_h(psi)).real
    if abs(e1 - e0) / escale > energy_tol:
        raise EvolutionError(
            f"energy drift {abs(e1 - e0) / escale:.3e}; reduce dt below {dt}"
        )
    return psi


# ---------------------------------------------------------------------------
# reduced objects
# ---------------------------------------------------------------------------


def reduced_densities(psi: np.ndarray, fs: FockSpace):
    """(gamma, pairing) with gamma_ij = <a_j psi, a_i psi>, pairing_ij = <psi, a_j a_i psi>."""
    apsi = [ladder(i, fs) @ psi for i in range(fs.M)]
    M = fs.M
    gamma = np.zeros((M, M), dtype=np.complex128)
    pairing = np.zeros((M, M), dtype=np.complex128)
    for i in range(M):
        for j in range(M):
            gamma[i, j] = np.vdot(apsi[j], apsi[i])
            pairing[i, j] = np.vdot(psi, ladder(j, fs) @ apsi[i])
    return gamma, pairing


def coupled_reduced_densities(psi: np.ndarray, fs: FockSpace):
    """Same as reduced_densities for a coupled (grid, fock) state."""
    M = fs.M
    apsi = [(ladder(i, fs) @ psi.T).T for i in range(M)]
    gamma = np.zeros((M, M), dtype=np.complex128)
    pairing = np.zeros((M, M), dtype=np.complex128)
    for i in range(M):
        for j in range(M):
            gamma[i, j] = np.vdot(apsi[j], apsi[i])
            pairing[i, j] = np.vdot(psi, (ladder(j, fs) @ apsi[i].T).T)
    return gamma, pairing


def top_level_population(psi: np.ndarray, fs: FockSpace) -> float:
    """Total weight on basis states with any occupation at the cutoff."""
    top = np.any(fs.occupations == fs.n_max, axis=1)
    if psi.ndim == 1:
        return float(np.sum(np.abs(psi[top]) ** 2))
    return float(np.sum(np.abs(psi[:, top]) ** 2))


def electron_reduced_density(psi: np.ndarray, grid: Grid3):
    """Tr_F |psi><psi| represented exactly on its low-rank support.

    Returns (basis, rho) where basis has orthonormal columns (l2 metric on
    the flattened grid) spanning the range of the density matrix and rho is
    the matrix of the density in that basis.
    """
    q, r = np.linalg.qr(psi)
    rho_small = r @ r.conj().T
    return q, rho_small


def trace_distance(rho1: np.ndarray, rho2: np.ndarray) -> float:
    diff = rho1 - rho2
    ev = np.linalg.eigvalsh(0.5 * (diff + diff.conj().T))
    return float(np.sum(np.abs(ev)))


def trace_distance_to_ground(psi: np.ndarray, phi0: Field) -> float:
    """Trace distance between Tr_F |psi><psi| and |phi0><phi0|, computed in
    the span of the Fock columns of psi together with phi0."""
    grid = phi0.grid
    v0 = phi0.values.ravel() * np.sqrt(grid.cell_volume)
    cols = np.concatenate([psi, v0[:, None]], axis=1)
    q, _ = np.linalg.qr(cols)
    psi_s = q.conj().T @ psi
    v0_s = q.conj().T @ v0
    rho = psi_s @ psi_s.conj().T
    ref = np.outer(v0_s, v0_s.conj())
    return trace_distance(rho, ref)


def displacement_operator(fs: FockSpace, amplitudes) -> np.ndarray:
    """Dense W(z) = exp(sum_i z_i a_i^dag - conj(z_i) a_i); test amplitudes only."""
    import scipy.linalg

    z = np.asarray(amplitudes, dtype=np.complex128)
    if z.shape != (fs.M,):
        raise ValueError("need one amplitude per mode")
    X = sp.csr_matrix((fs.dim, fs.dim), dtype=np.complex128)
    for i in range(fs.M):
        a = ladder(i, fs)
        X = X + z[i] * a.conj().T - np.conj(z[i]) * a
    return scipy.linalg.expm(X.toarray())

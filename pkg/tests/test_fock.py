"""Truncated Fock-space oracle: enumeration, ladder algebra, Hamiltonians,
propagation, and reduced objects."""

import numpy as np
import pytest

from polaronlab import fock as fk
from polaronlab import quasifree as qf


@pytest.fixture(scope="module")
def fs():
    return fk.FockSpace(2, 4)


def test_dimension_and_index_bijection(fs):
    assert fs.dim == 25
    for i, occ in enumerate(fs.occupations):
        assert fs.index(occ) == i


def test_dimension_cap():
    with pytest.raises(fk.FockDimensionError):
        fk.FockSpace(6, 9)


def test_ladder_matrix_elements(fs):
    a0 = fk.ladder(0, fs).toarray()
    src = fs.index((3, 1))
    dst = fs.index((2, 1))
    assert a0[dst, src] == pytest.approx(np.sqrt(3.0))


def test_ccr_on_interior_block(fs):
    # [a_i, a_j^dag] = delta_ij away from the cutoff boundary; the sqrt(n)
    # factors square back to integers only up to one rounding ulp
    interior = np.where(np.all(fs.occupations < fs.n_max, axis=1))[0]
    block = np.ix_(interior, interior)
    for i in range(fs.M):
        for j in range(fs.M):
            a_i = fk.ladder(i, fs).toarray()
            a_j = fk.ladder(j, fs).toarray()
            comm = a_i @ a_j.conj().T - a_j.conj().T @ a_i
            expected = np.eye(fs.dim) if i == j else np.zeros((fs.dim, fs.dim))
            assert np.max(np.abs(comm[block] - expected[block])) <= 1e-13


def test_number_operator_diagonal(fs):
    N = fk.number_operator(fs).toarray()
    assert np.array_equal(np.diag(N), fs.occupations.sum(axis=1))
    assert np.count_nonzero(N - np.diag(np.diag(N))) == 0


def test_vacuum(fs):
    v = fs.vacuum()
    assert v[fs.vacuum_index] == 1.0
    assert np.linalg.norm(v) == 1.0
    g, p = fk.reduced_densities(v, fs)
    assert np.max(np.abs(g)) == 0.0
    assert np.max(np.abs(p)) == 0.0


def test_single_excitation_density(fs):
    psi = np.zeros(fs.dim, dtype=np.complex128)
    psi[fs.index((1, 0))] = 1.0
    g, p = fk.reduced_densities(psi, fs)
    assert np.allclose(g, np.diag([1.0, 0.0]))
    assert np.max(np.abs(p)) == 0.0


def test_quadratic_hamiltonian_hermitian(bundle, fs):
    H = fk.build_quadratic_hamiltonian(bundle.kernels, fs)
    assert abs(H - H.conj().T).max() <= 1e-12


def test_normal_ordering_identity(bundle, fs):
    # route 1: normal-ordered dGamma(1-G) minus pairing terms
    # route 2: N - A + eps assembled from raw resolvent products
    H1 = fk.build_quadratic_hamiltonian(bundle.kernels, fs)
    H2 = fk.build_effective_operator_direct(bundle.kernels, fs)
    assert abs(H1 - H2).max() <= 1e-10


def test_displacement_shift_relation():
    # W(z)^dag a_i W(z) = a_i + z_i at small test amplitude; checked on the
    # low-occupation block where the cutoff tail is negligible
    big = fk.FockSpace(2, 8)
    z = np.array([0.1 - 0.05j, 0.05j])
    W = fk.displacement_operator(big, z)
    assert np.max(np.abs(W @ W.conj().T - np.eye(big.dim))) <= 1e-10
    interior = np.where(big.occupations.sum(axis=1) <= 2)[0]
    block = np.ix_(interior, interior)
    for i in range(big.M):
        a = fk.ladder(i, big).toarray()
        shifted = W.conj().T @ a @ W
        target = a + z[i] * np.eye(big.dim)
        assert np.max(np.abs(shifted[block] - target[block])) <= 1e-6


def test_quadratic_evolution_matches_quasifree(bundle):
    fs = fk.FockSpace(2, 12)
    H = fk.build_quadratic_hamiltonian(bundle.kernels, fs).toarray()
    tau = 1.0
    ev, P = np.linalg.eigh(H)
    psi = P @ (np.exp(-1j * tau * ev) * (P.conj().T @ fs.vacuum()))
    g, p = fk.reduced_densities(psi, fs)
    gen = qf.build_generator(bundle.kernels)
    st = qf.evolve_quasifree(qf.vacuum_state(2), qf.propagate_map(gen, tau, 1.0))
    assert np.max(np.abs(st.gamma - g)) <= 1e-6
    assert np.max(np.abs(st.pairing - p)) <= 1e-6


def test_lanczos_matches_dense_exponential(bundle):
    fs = fk.FockSpace(2, 8)
    H = fk.build_quadratic_hamiltonian(bundle.kernels, fs)
    Hd = H.toarray()
    ev, P = np.linalg.eigh(Hd)
    t = 3.0
    exact = P @ (np.exp(-1j * t * ev) * (P.conj().T @ fs.vacuum()))
    approx = fk.evolve_state(lambda x: H @ x, fs.vacuum(), t, dt=0.5)
    assert np.linalg.norm(exact - approx) <= 1e-12


def test_evolve_state_dt_halving_convergence(bundle):
    # with a tiny Krylov space the step error is visible and shrinks with dt
    fs = fk.FockSpace(2, 6)
    H = fk.build_quadratic_hamiltonian(bundle.kernels, fs)
    Hd = H.toarray()
    ev, P = np.linalg.eigh(Hd)
    t = 2.0
    exact = P @ (np.exp(-1j * t * ev) * (P.conj().T @ fs.vacuum()))
    errs = []
    for dt in (0.5, 0.25, 0.125):
        approx = fk.evolve_state(
            lambda x: H @ x, fs.vacuum(), t, dt=dt, krylov_dim=3
        )
        errs.append(np.linalg.norm(exact - approx))
    assert errs[1] < errs[0] and errs[2] < errs[1]


def test_evolve_state_rejects_unnormalized(bundle):
    fs = fk.FockSpace(2, 4)
    H = fk.build_quadratic_hamiltonian(bundle.kernels, fs)
    with pytest.raises(ValueError):
        fk.evolve_state(lambda x: H @ x, 2.0 * fs.vacuum(), 1.0)


def test_coupled_hamiltonian_hermitian(bundle, rng):
    fs = fk.FockSpace(2, 3)
    H = fk.CoupledHamiltonian(bundle.dsol, fs, alpha=2.0)
    p1 = rng.standard_normal(H.shape) + 1j * rng.standard_normal(H.shape)
    p2 = rng.standard_normal(H.shape) + 1j * rng.standard_normal(H.shape)
    lhs = np.vdot(p1, H.apply(p2))
    rhs = np.vdot(H.apply(p1), p2)
    assert abs(lhs - rhs) <= 1e-9 * np.linalg.norm(p1) * np.linalg.norm(p2)


def test_coupled_reference_state_has_zero_energy(bundle):
    # (h - lambda) phi0 = 0 and <vacuum coupling term> = 0
    fs = fk.FockSpace(2, 3)
    H = fk.CoupledHamiltonian(bundle.dsol, fs, alpha=2.0)
    psi0 = fk.product_state(bundle.dsol.phi0, fs.vacuum())
    assert abs(np.linalg.norm(psi0) - 1.0) <= 1e-10
    assert abs(H.expectation(psi0)) <= 1e-10


def test_top_level_population(fs):
    psi = np.zeros(fs.dim, dtype=np.complex128)
    psi[fs.index((fs.n_max, 0))] = 1.0
    assert fk.top_level_population(psi, fs) == 1.0
    assert fk.top_level_population(fs.vacuum(), fs) == 0.0


def test_trace_distance_trivials():
    rho1 = np.diag([1.0, 0.0]).astype(complex)
    rho2 = np.diag([0.0, 1.0]).astype(complex)
    assert fk.trace_distance(rho1, rho1) == 0.0
    assert fk.trace_distance(rho1, rho2) == pytest.approx(2.0)


def test_trace_distance_to_ground_product_state(bundle):
    fs = fk.FockSpace(2, 3)
    psi = fk.product_state(bundle.dsol.phi0, fs.vacuum())
    assert fk.trace_distance_to_ground(psi, bundle.dsol.phi0) <= 1e-10

import numpy as np
import pytest
from math import comb

from conftest import hubbard_exact
from v2dm.model import (Hamiltonian, hubbard_1d, hubbard_fragments, is_convex_table,
                        reduced_hamiltonian)
from v2dm.nrep_maps import rho_from_gamma
from v2dm.oracle import (FockBasis, apply_string, energy_vs_N, exact_1dm, exact_2dm,
                         exact_ground, fock_basis, hopping_min_full, hopping_min_singly_occupied,
                         pair_creation_matrix, pair_op_max_eig, spin_squared_matrix)
from v2dm.pair_basis import tb_trace, wedge_from_rho
from v2dm.sharp import pairing_matrix


def test_fock_basis_enumeration():
    fb = FockBasis(5, 2)
    assert fb.dim == comb(5, 2)
    assert list(fb.masks) == sorted(fb.masks)
    assert all(bin(int(m)).count("1") == 2 for m in fb.masks)
    assert np.array_equal(fb.index(fb.masks), np.arange(fb.dim))
    with pytest.raises(ValueError):
        FockBasis(3, 4)


def test_jordan_wigner_signs():
    # a+_0 on |orbital 1> has no sign, a+_2 on |orbital 1> picks up -1
    m = np.array([0b010], dtype=np.int64)
    out, s, ok = apply_string(m, [(0, True)])
    assert out[0] == 0b011 and s[0] == 1 and ok[0]
    out, s, ok = apply_string(m, [(2, True)])
    assert out[0] == 0b110 and s[0] == -1 and ok[0]
    _, _, ok = apply_string(m, [(1, True)])
    assert not ok[0]
    # anticommutation a+_0 a+_2 = -a+_2 a+_0
    e = np.array([0], dtype=np.int64)
    o1, s1, _ = apply_string(e, [(0, True), (2, True)])
    o2, s2, _ = apply_string(e, [(2, True), (0, True)])
    assert o1[0] == o2[0] and s1[0] == -s2[0]


@pytest.mark.parametrize("U,ref", [(1000.0, -2.01), (50.0, -2.20)])
def test_ground_energy_references(U, ref):
    assert hubbard_exact(6, 5, U)[0] == pytest.approx(ref, abs=0.01)


def test_two_site_ground_energy():
    E, psi = exact_ground(hubbard_1d(2, 1.0, 0.0), 2)
    assert E == pytest.approx(-4.0, abs=1e-12)
    assert np.linalg.norm(psi) == pytest.approx(1.0)


def test_dimension_cap():
    H = Hamiltonian(np.zeros((24, 24)), np.zeros((276, 276)))
    with pytest.raises(ValueError):
        exact_ground(H, 12)


def test_iterative_path_matches_dense():
    # C(14, 6) = 3003 stays dense; C(16, 7) = 11440 goes through the iterative solver
    E, psi = exact_ground(hubbard_1d(8, 1.0, 4.0), 7)
    G = exact_2dm(psi, 16, 7)
    assert np.vdot(G, reduced_hamiltonian(hubbard_1d(8, 1.0, 4.0), 7)) == pytest.approx(E, abs=1e-8)


def test_exact_2dm_traces():
    for L, N in [(3, 2), (4, 3), (6, 5)]:
        _, G, rho = hubbard_exact(L, N, 4.0)
        assert tb_trace(G) == pytest.approx(N * (N - 1) / 2, abs=1e-10)
        assert np.trace(rho) == pytest.approx(N, abs=1e-10)
        assert np.allclose(rho_from_gamma(G, N), rho, atol=1e-10)


def test_determinant_gives_wedge_product():
    M, N = 6, 3
    fb = fock_basis(M, N)
    psi = np.zeros(fb.dim)
    psi[fb.index(np.array([0b010101]))] = 1.0
    G = exact_2dm(psi, M, N)
    rho = exact_1dm(psi, M, N)
    assert np.allclose(np.diag(rho), [1, 0, 1, 0, 1, 0])
    assert np.allclose(G, wedge_from_rho(rho))


def test_mixed_state_weights_are_linear():
    _, psi0 = exact_ground(hubbard_1d(3, 1.0, 4.0), 3)
    _, psi1 = exact_ground(hubbard_1d(3, 1.0, 0.0), 3)
    both = np.stack([psi0, psi1], axis=1)
    G = exact_2dm(both, 6, 3, [0.25, 0.75])
    ref = 0.25 * exact_2dm(psi0, 6, 3) + 0.75 * exact_2dm(psi1, 6, 3)
    assert np.allclose(G, ref)


def test_spin_squared_spectrum():
    w = np.linalg.eigvalsh(spin_squared_matrix(4, 2).toarray())
    vals = sorted(set(np.round(w, 10)))
    assert vals == [0.0, 2.0]


@pytest.mark.parametrize("L,N,ref", [(6, 5, -7.0), (6, 6, -8.0), (6, 0, 0.0), (6, 1, -2.0)])
def test_hopping_min_full(L, N, ref):
    assert hopping_min_full(L, N) == pytest.approx(ref)


@pytest.mark.parametrize("L,N,t,ref", [(6, 5, 1.0, -2.0), (6, 6, 1.0, 0.0), (6, 1, 1.5, -3.0),
                                       (4, 0, 1.0, 0.0)])
def test_hopping_min_singly_occupied(L, N, t, ref):
    assert hopping_min_singly_occupied(L, N, t) == pytest.approx(ref, abs=1e-9)


def test_hopping_min_singly_occupied_errors():
    with pytest.raises(ValueError):
        hopping_min_singly_occupied(4, 5)
    with pytest.raises(ValueError):
        hopping_min_singly_occupied(20, 10)


def test_infinite_U_limit_matches_singly_occupied_minimum():
    assert hubbard_exact(6, 5, 1e6)[0] == pytest.approx(hopping_min_singly_occupied(6, 5), abs=1e-3)


def test_energy_vs_N_envelope():
    H = hubbard_fragments([3], 1.0, 8.0)
    table, chords = energy_vs_N(H, range(0, 7))
    assert table[0] == (0, 0.0)
    assert table[1][1] == pytest.approx(-np.sqrt(2) * 1.0)
    assert is_convex_table(table)
    slopes = [s for s, _ in chords]
    assert all(b >= a for a, b in zip(slopes, slopes[1:]))


def test_pair_op_max_eig_trivial():
    assert pair_op_max_eig(np.zeros((6, 6)), 4) == 0.0
    with pytest.raises(ValueError):
        pair_op_max_eig(np.ones((4, 4)), 2)


@pytest.mark.parametrize("n", [1, 2, 3])
def test_pair_op_structureless_matches_closed_form(n):
    M = 8
    B = pairing_matrix(np.full(M // 2, 1 / np.sqrt(M)), np.eye(M))
    assert pair_op_max_eig(B, 2 * n) == pytest.approx(n * (1 - 2 * (n - 1) / M), abs=1e-10)


def test_pair_op_hermiticity(rng):
    A = rng.standard_normal((6, 6))
    B = A - A.T
    # <B+B> of any state is at most the max eigenvalue
    P = pair_creation_matrix(B, 4).toarray()
    lam = pair_op_max_eig(B, 4)
    for _ in range(5):
        v = rng.standard_normal(P.shape[0])
        v /= np.linalg.norm(v)
        assert np.linalg.norm(P.T @ v) ** 2 <= lam + 1e-10

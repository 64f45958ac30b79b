import numpy as np
import pytest

from conftest import hubbard_exact, random_mixed_state
from v2dm.constraints import (LinearEquality, LinearInequality, NonlinHopping,
                              hubbard_nonlin_hopping, nonlin_f_star, nonlin_g, nonlin_h,
                              pair_trace_selector, singlet_projection_equalities,
                              spin_squared_equality)
from v2dm.model import hubbard_1d
from v2dm.oracle import exact_2dm, hamiltonian_matrix, spin_squared_matrix
from v2dm.pair_basis import d2_of, tb_identity


def _hop(L=6, N=5):
    return hubbard_nonlin_hopping(hubbard_1d(L, 1.0, 0.0), L, N)


def test_linear_equality_and_inequality_basics(rng):
    E = np.eye(3)
    q = LinearEquality(E, 2.0)
    assert q.residual(np.eye(3)) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        LinearEquality(np.triu(np.ones((3, 3))), 0.0)
    C = np.diag([1.0, 2.0, 3.0])
    li = LinearInequality(C, 1.5, 3)
    # homogeneous form on a normalized matrix equals the slack
    G = np.diag([0.5, 1.0, 1.5])
    assert np.vdot(G, li.C0) == pytest.approx(li.slack(G))
    with pytest.raises(ValueError):
        LinearInequality(np.triu(np.ones((3, 3))), 0.0, 3)


def test_spin_two_electron_singlet():
    _, G, _ = hubbard_exact(2, 2, 4.0)
    assert spin_squared_equality(2, 4, 0.0).residual(G) == pytest.approx(0.0, abs=1e-10)


@pytest.mark.parametrize("L,N,S", [(6, 6, 0.0), (6, 5, 0.5), (4, 3, 0.5), (4, 4, 0.0)])
def test_spin_equality_holds_for_ground_states(L, N, S):
    _, G, _ = hubbard_exact(L, N, 4.0)
    q = spin_squared_equality(N, 2 * L, S)
    assert q.e == pytest.approx(S * (S + 1))
    assert q.residual(G) == pytest.approx(0.0, abs=1e-9)


def test_spin_equality_matches_fock_operator(rng):
    M, N = 6, 3
    psi, w = random_mixed_state(M, N, 3, seed=7)
    S2 = spin_squared_matrix(M, N).toarray()
    ref = sum(wi * p @ S2 @ p for wi, p in zip(w, psi.T))
    G = exact_2dm(psi, M, N, w)
    E = spin_squared_equality(N, M, 0.5).E
    assert np.vdot(G, E) == pytest.approx(ref, abs=1e-10)


@pytest.mark.parametrize("N,S", [(3, 0.0), (4, 0.5), (2, 2.0), (2, -1.0)])
def test_spin_equality_rejects_unreachable(N, S):
    with pytest.raises(ValueError):
        spin_squared_equality(N, 8, S)


def test_singlet_projection_exact_singlet():
    _, G, _ = hubbard_exact(3, 2, 4.0)
    eqs = singlet_projection_equalities(2, 6)
    # rows come from S_z, S_+ and S_-, so the rank is at most 3 M^2
    assert 0 < len(eqs) <= 3 * 36
    assert max(abs(q.residual(G)) for q in eqs) <= 1e-9
    assert all(q.residual(np.zeros_like(G)) == 0.0 for q in eqs)
    # the generated set is orthonormal
    R = np.array([q.E.ravel() for q in eqs])
    assert np.allclose(R @ R.T, np.eye(len(eqs)), atol=1e-10)


def test_singlet_projection_detects_triplet():
    M, N = 6, 2
    S2 = spin_squared_matrix(M, N).toarray()
    H = hubbard_1d(3, 1.0, 4.0)
    Hm = hamiltonian_matrix(H, N).toarray() + 100.0 * (2.0 - S2) ** 2
    w, v = np.linalg.eigh(Hm)
    psi = v[:, 0]
    assert psi @ S2 @ psi == pytest.approx(2.0)
    G = exact_2dm(psi, M, N)
    assert max(abs(q.residual(G)) for q in singlet_projection_equalities(N, M)) > 1e-3


def test_pair_trace_selector_counts_double_occupancy():
    _, G, _ = hubbard_exact(4, 4, 4.0)
    P = pair_trace_selector(8)
    assert np.count_nonzero(P) == 4
    assert 0 < np.vdot(G, P) < 2


def test_nonlin_threshold_value():
    hop = _hop()
    assert (hop.T0, hop.Tinf) == pytest.approx((-7.0, -2.0))
    assert hop.c == pytest.approx((5 / 14) ** 2)
    assert hop.threshold == pytest.approx(0.1131, abs=1e-4)


def test_nonlin_f_star_branches():
    hop = _hop()
    assert nonlin_f_star(0.0, hop) == pytest.approx(hop.Tinf)
    assert nonlin_f_star(0.3, hop) == pytest.approx(hop.T0)
    assert nonlin_f_star(0.3, hop, norm=0.5) == pytest.approx(0.5 * hop.T0)
    assert nonlin_g(0.3, hop) == 0.0 and nonlin_h(0.3, hop) == 0.0
    # the two branches meet at the threshold
    x = hop.threshold
    assert nonlin_f_star(x, hop) == pytest.approx(hop.T0, rel=1e-9)
    with pytest.raises(ValueError):
        nonlin_f_star(-0.1, hop)


@pytest.mark.parametrize("x", [0.01, 0.03, 0.06, 0.09, 0.11])
def test_nonlin_derivatives_finite_differences(x):
    hop = _hop()
    h = 1e-5
    g_fd = (nonlin_f_star(x + h, hop) - nonlin_f_star(x - h, hop)) / (2 * h)
    h_fd = (nonlin_g(x + h, hop) - nonlin_g(x - h, hop)) / (2 * h)
    assert nonlin_g(x, hop) == pytest.approx(g_fd, rel=1e-6)
    assert nonlin_h(x, hop) == pytest.approx(h_fd, rel=1e-6)


def test_nonlin_f_star_is_convex_on_active_branch():
    hop = _hop()
    xs = np.linspace(1e-3, hop.threshold - 1e-3, 50)
    assert all(nonlin_h(x, hop) > 0 for x in xs)


def test_nonlin_validation():
    T = np.zeros((1, 1))
    with pytest.raises(ValueError):
        NonlinHopping(T, T, -1.0, -2.0, 3)
    with pytest.raises(ValueError):
        NonlinHopping(T, T, 0.0, 0.0, 3)


@pytest.mark.parametrize("U", [0.0, 4.0, 8.0, 50.0, 1000.0])
def test_exact_states_satisfy_hopping_bound(U):
    L, N = 6, 5
    _, G, _ = hubbard_exact(L, N, U)
    hop = _hop(L, N)
    s = np.vdot(G, hop.T) - nonlin_f_star(hop.pair_trace(G), hop)
    assert s >= -1e-8


def test_identity_start_is_normalized_for_bound():
    L, N = 6, 5
    hop = _hop(L, N)
    G0 = N * (N - 1) / (2 * L * (2 * L - 1)) * tb_identity(2 * L)
    assert G0.shape == (d2_of(2 * L),) * 2
    # the uniform start has zero hopping energy and sits above the bound
    assert np.vdot(G0, hop.T) == pytest.approx(0.0, abs=1e-12)
    assert np.vdot(G0, hop.T) > nonlin_f_star(hop.pair_trace(G0), hop)

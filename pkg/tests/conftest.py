import functools

import numpy as np
import pytest

from v2dm.model import hubbard_1d
from v2dm.oracle import exact_1dm, exact_2dm, exact_ground, fock_basis


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_symmetric(rng, n, scale=1.0):
    A = rng.standard_normal((n, n)) * scale
    return 0.5 * (A + A.T)


def random_mixed_state(M, N, k=3, seed=0):
    """Weights and columns of a random k-state ensemble on N particles."""
    r = np.random.default_rng(seed)
    dim = fock_basis(M, N).dim
    psi = r.standard_normal((dim, k))
    psi /= np.linalg.norm(psi, axis=0)
    w = r.random(k) + 0.1
    return psi, w / w.sum()


def random_mixed_2dm(M, N, k=3, seed=0):
    psi, w = random_mixed_state(M, N, k, seed)
    return exact_2dm(psi, M, N, w), exact_1dm(psi, M, N, w)


@functools.lru_cache(maxsize=None)
def hubbard_exact(L, N, U, t=1.0):
    """(E0, Gamma, rho) of the periodic chain ground state."""
    H = hubbard_1d(L, t, U)
    E, psi = exact_ground(H, N)
    return E, exact_2dm(psi, 2 * L, N), exact_1dm(psi, 2 * L, N)


def min_eig(A):
    return float(np.linalg.eigvalsh(0.5 * (A + A.T))[0])


# one line per acceptance criterion, echoed at the end of the session
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

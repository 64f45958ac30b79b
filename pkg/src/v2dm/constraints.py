"""Linear equality and inequality constraints on the 2DM, spin constraint
generators and the scalar pieces of the nonlinear hopping bound.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import List

import numpy as np

from .model import antisymmetrize_product, lift_one_body
from .nrep_maps import linear_map
from .pair_basis import basis_for, d2_of, sym


@dataclass
class LinearEquality:
    """tr(G E) = e."""

    E: np.ndarray
    e: float

    def __post_init__(self):
        self.E = np.asarray(self.E, dtype=float)
        if not np.allclose(self.E, self.E.T, atol=1e-12 * max(1.0, np.abs(self.E).max())):
            raise ValueError("equality matrix must be symmetric")
        self.e = float(self.e)

    def residual(self, G: np.ndarray) -> float:
        return float(np.vdot(G, self.E) - self.e)


@dataclass
class LinearInequality:
    """tr(G C) >= c, carried in homogeneous form tr(G C0) >= 0."""

    C: np.ndarray
    c: float
    N: int

    def __post_init__(self):
        self.C = np.asarray(self.C, dtype=float)
        if not np.allclose(self.C, self.C.T, atol=1e-12 * max(1.0, np.abs(self.C).max())):
            raise ValueError("inequality matrix must be symmetric")
        self.c = float(self.c)

    @property
    def C0(self) -> np.ndarray:
        scale = 2.0 * self.c / (self.N * (self.N - 1))
        return self.C - scale * np.eye(self.C.shape[0])

    def slack(self, G: np.ndarray) -> float:
        return float(np.vdot(G, self.C) - self.c)


# -- spin --------------------------------------------------------------------

def _spin_one_body(M: int):
    """Single-particle s_z, s_+, s_- over spin-orbitals (2i up, 2i+1 down)."""
    if M % 2:
        raise ValueError("spin operators need an even number of spin-orbitals")
    sz = np.diag([0.5 if a % 2 == 0 else -0.5 for a in range(M)])
    sp = np.zeros((M, M))
    sp[np.arange(0, M, 2), np.arange(1, M, 2)] = 1.0
    return sz, sp, sp.T.copy()


def spin_squared_matrix_2b(M: int, N: int) -> np.ndarray:
    """Two-particle matrix E with tr(G E) = <S^2> for a normalized 2DM."""
    sz, sp, sm = _spin_one_body(M)
    v = (np.einsum("ac,bd->abcd", sz, sz)
         + 0.5 * np.einsum("ac,bd->abcd", sp, sm)
         + 0.5 * np.einsum("ac,bd->abcd", sm, sp))
    return lift_one_body(0.75 * np.eye(M), N) + antisymmetrize_product(v)


def spin_squared_equality(N: int, M: int, S: float) -> LinearEquality:
    twoS = 2 * S
    if abs(twoS - round(twoS)) > 1e-12 or S < 0 or S > N / 2 or (round(twoS) - N) % 2:
        raise ValueError(f"spin S={S} is not reachable with N={N}")
    return LinearEquality(spin_squared_matrix_2b(M, N), S * (S + 1))


def singlet_projection_equalities(N: int, M: int, tol: float = 1e-10) -> List[LinearEquality]:
    """Equalities G(G) x = 0 for x in {S_z, S_+, S_-}, reduced to an
    orthonormal independent set.  The list length is the rank."""
    sz, sp, sm = _spin_one_body(M)
    Gmap = linear_map("G", M, N)
    rows = []
    for op in (sz, sp, sm):
        # <a+_a a_b S> with S = sum_cd op_{dc} a+_d a_c, i.e. x_{cd} = op_{dc}
        x = op.T.ravel()
        for ab in range(M * M):
            A = np.zeros((M * M, M * M))
            A[ab] = x
            rows.append(Gmap.adjoint(A).ravel())
    R = np.array(rows)
    U, s, Vt = np.linalg.svd(R, full_matrices=False)
    rank = int(np.sum(s > tol * s[0])) if s.size and s[0] > 0 else 0
    d2 = d2_of(M)
    return [LinearEquality(sym(Vt[k].reshape(d2, d2)), 0.0) for k in range(rank)]


# -- nonlinear hopping bound ----------------------------------------------

def pair_trace_selector(M: int) -> np.ndarray:
    """Diagonal matrix picking G_{i up i down; i up i down}."""
    pb = basis_for(M)
    one = np.zeros((pb.d2, pb.d2))
    idx = pb.slot[np.arange(0, M, 2), np.arange(1, M, 2)]
    one[idx, idx] = 1.0
    return one


@dataclass
class NonlinHopping:
    """Lower bound tr(G T) >= f*(pair trace) on the hopping energy."""

    T: np.ndarray
    one_P: np.ndarray
    T0: float
    Tinf: float
    N: int

    def __post_init__(self):
        if not (self.T0 <= self.Tinf + 1e-12 and self.Tinf <= 1e-12):
            raise ValueError("need T0 <= Tinf <= 0")
        if self.T0 >= 0:
            raise ValueError("T0 must be negative")

    @property
    def c(self) -> float:
        return ((self.Tinf - self.T0) / (2.0 * self.T0)) ** 2

    @property
    def threshold(self) -> float:
        return self.c / (1.0 + self.c)

    def pair_trace(self, G: np.ndarray) -> float:
        return float(np.vdot(G, self.one_P))


def hubbard_nonlin_hopping(H, L: int, N: int, t: float = 1.0) -> NonlinHopping:
    """Hopping bound data for a periodic 1D Hubbard chain."""
    from .oracle import hopping_min_full, hopping_min_singly_occupied

    M = 2 * L
    T = lift_one_body(H.t, N)
    return NonlinHopping(T, pair_trace_selector(M), hopping_min_full(L, N, t),
                         hopping_min_singly_occupied(L, N, t), N)


def _active(x: float, hop: NonlinHopping) -> bool:
    return x <= hop.threshold


def nonlin_f_star(x: float, hop: NonlinHopping, norm: float = 1.0) -> float:
    """f* at pair trace x; ``norm`` is 2 tr(G) / (N(N-1)) for the flat branch."""
    if x < 0:
        raise ValueError("pair trace must be non-negative")
    if not _active(x, hop):
        return norm * hop.T0
    r = np.sqrt(x * (1.0 - x))
    return (1.0 - x) * hop.Tinf + hop.T0 * (x + 2.0 * r)


def nonlin_g(x: float, hop: NonlinHopping) -> float:
    if not _active(x, hop):
        return 0.0
    r = np.sqrt(x * (1.0 - x))
    return hop.T0 - hop.Tinf + hop.T0 * (1.0 - 2.0 * x) / r


def nonlin_h(x: float, hop: NonlinHopping) -> float:
    if not _active(x, hop):
        return 0.0
    q = x * (1.0 - x)
    return -(hop.T0 * (1.0 - 2.0 * x) ** 2 / (2.0 * q ** 1.5) + 2.0 * hop.T0 / np.sqrt(q))

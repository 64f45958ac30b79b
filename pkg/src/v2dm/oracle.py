"""Exact diagonalization on bit-string Fock bases.

Basis states are bitmasks of weight N in ascending integer order.  Creating
or annihilating orbital p on mask m costs the sign (-1)^popcount(m & (2^p - 1)).
"""
from __future__ import annotations

from functools import lru_cache
from itertools import combinations
from math import comb
from typing import List, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .model import Hamiltonian, envelope_chords, hubbard_1d
from .pair_basis import basis_for

DENSE_LIMIT = 4000
DIM_CAP = 200_000


class FockBasis:
    def __init__(self, M: int, N: int):
        if not (0 <= N <= M):
            raise ValueError(f"invalid N={N} for M={M}")
        self.M, self.N = M, N
        masks = [sum(1 << p for p in c) for c in combinations(range(M), N)]
        self.masks = np.array(sorted(masks), dtype=np.int64)

    @property
    def dim(self) -> int:
        return len(self.masks)

    def index(self, masks: np.ndarray) -> np.ndarray:
        return np.searchsorted(self.masks, masks)


@lru_cache(maxsize=64)
def fock_basis(M: int, N: int) -> FockBasis:
    return FockBasis(M, N)


def apply_string(masks: np.ndarray, ops: Sequence[Tuple[int, bool]]):
    """Apply a product of ladder operators (rightmost first) to every mask.

    Returns (new masks, signs, valid flags).
    """
    m = masks.copy()
    sign = np.ones(len(m))
    ok = np.ones(len(m), dtype=bool)
    for p, dagger in reversed(ops):
        bit = np.int64(1) << np.int64(p)
        occ = (m & bit) != 0
        ok &= occ != dagger
        par = np.bitwise_count(m & (bit - 1)) & 1
        sign *= 1.0 - 2.0 * par
        m = m ^ bit
    return m, sign, ok


def operator_matrix(src: FockBasis, dst: FockBasis,
                    terms: Sequence[Tuple[float, Sequence[Tuple[int, bool]]]]) -> sp.csr_matrix:
    rows, cols, vals = [], [], []
    src_idx = np.arange(src.dim)
    for coef, ops in terms:
        if coef == 0.0:
            continue
        m, s, ok = apply_string(src.masks, ops)
        if not np.any(ok):
            continue
        rows.append(dst.index(m[ok]))
        cols.append(src_idx[ok])
        vals.append(coef * s[ok])
    if not rows:
        return sp.csr_matrix((dst.dim, src.dim))
    return sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(dst.dim, src.dim)).tocsr()


def hamiltonian_terms(H: Hamiltonian):
    terms = []
    for a, b in np.argwhere(H.t != 0.0):
        terms.append((H.t[a, b], [(int(a), True), (int(b), False)]))
    pb = basis_for(H.M)
    for p, q in np.argwhere(H.V != 0.0):
        a, b, c, d = pb.pa[p], pb.pb[p], pb.pa[q], pb.pb[q]
        terms.append((H.V[p, q], [(int(a), True), (int(b), True), (int(d), False), (int(c), False)]))
    return terms


def hamiltonian_matrix(H: Hamiltonian, N: int) -> sp.csr_matrix:
    fb = fock_basis(H.M, N)
    return operator_matrix(fb, fb, hamiltonian_terms(H))


def _lowest(Hm: sp.csr_matrix, k: int = 1):
    n = Hm.shape[0]
    if n <= DENSE_LIMIT:
        w, v = np.linalg.eigh(Hm.toarray())
        return w[:k], v[:, :k]
    rng = np.random.default_rng(12345)
    v0 = rng.standard_normal(n)
    w, v = spla.eigsh(Hm, k=k, which="SA", v0=v0, tol=1e-10)
    order = np.argsort(w)
    return w[order], v[:, order]


def exact_ground(H: Hamiltonian, N: int) -> Tuple[float, np.ndarray]:
    if comb(H.M, N) > DIM_CAP:
        raise ValueError(f"Fock dimension C({H.M},{N}) exceeds cap {DIM_CAP}")
    w, v = _lowest(hamiltonian_matrix(H, N))
    return float(w[0]), v[:, 0]


def _ladder_columns(psi: np.ndarray, M: int, N: int, ops_for) -> np.ndarray:
    """Stack op(psi) over a list of operator strings; psi may hold several columns."""
    src = fock_basis(M, N)
    psi = psi.reshape(src.dim, -1)
    cols = []
    for ops in ops_for:
        m, s, ok = apply_string(src.masks, ops)
        nloss = sum(1 if not d else -1 for _, d in ops)
        dst = fock_basis(M, N - nloss)
        out = np.zeros((dst.dim, psi.shape[1]))
        np.add.at(out, dst.index(m[ok]), s[ok, None] * psi[ok])
        cols.append(out.ravel())
    return np.array(cols).T


def exact_1dm(psi: np.ndarray, M: int, N: int, weights: Sequence[float] | None = None) -> np.ndarray:
    psi = _weighted(psi, weights)
    Phi = _ladder_columns(psi, M, N, [[(g, False)] for g in range(M)])
    return Phi.T @ Phi


def exact_2dm(psi: np.ndarray, M: int, N: int, weights: Sequence[float] | None = None) -> np.ndarray:
    """G_{ab;cd} = <a_b a_a psi | a_d a_c psi> over ordered pairs."""
    psi = _weighted(psi, weights)
    pb = basis_for(M)
    ops = [[(int(d), False), (int(c), False)] for c, d in zip(pb.pa, pb.pb)]
    Phi = _ladder_columns(psi, M, N, ops)
    return Phi.T @ Phi


def _weighted(psi: np.ndarray, weights):
    if weights is None:
        return psi
    psi = psi.reshape(psi.shape[0], -1)
    return psi * np.sqrt(np.asarray(weights, dtype=float))[None, :]


def spin_operators(M: int, N: int):
    """S_z, S_+, S_- on the N-particle Fock space (orbital 2i up, 2i+1 down)."""
    fb = fock_basis(M, N)
    Sz = operator_matrix(fb, fb, [(0.5 if a % 2 == 0 else -0.5, [(a, True), (a, False)])
                                  for a in range(M)])
    Sp = operator_matrix(fb, fb, [(1.0, [(a, True), (a + 1, False)]) for a in range(0, M, 2)])
    Sm = Sp.T.tocsr()
    return Sz, Sp, Sm


def spin_squared_matrix(M: int, N: int) -> sp.csr_matrix:
    Sz, Sp, Sm = spin_operators(M, N)
    return (Sz @ Sz + 0.5 * (Sp @ Sm + Sm @ Sp)).tocsr()


def spin_mixed_2dm(M: int, N: int, S: float) -> np.ndarray:
    """2DM of the uniform ensemble over all N-particle states with total spin S."""
    S2 = spin_squared_matrix(M, N).toarray()
    w, v = np.linalg.eigh(S2)
    sel = np.abs(w - S * (S + 1)) < 1e-8
    if not np.any(sel):
        raise ValueError(f"no states with S={S} for M={M}, N={N}")
    k = int(sel.sum())
    return exact_2dm(v[:, sel], M, N, np.full(k, 1.0 / k))


def hopping_min_full(L: int, N: int, t: float = 1.0) -> float:
    if N == 0:
        return 0.0
    eps = np.sort(np.repeat(-2.0 * t * np.cos(2 * np.pi * np.arange(L) / L), 2))
    return float(eps[:N].sum())


def hopping_min_singly_occupied(L: int, N: int, t: float = 1.0) -> float:
    if N > L:
        raise ValueError("no singly-occupied states with N > L")
    if comb(L, N) * 2 ** N > 1_000_000:
        raise ValueError("singly-occupied space exceeds cap")
    if N == 0:
        return 0.0
    H = hubbard_1d(L, t, 0.0)
    fb = fock_basis(2 * L, N)
    up = fb.masks & np.int64(int("01" * L, 2))
    dn = (fb.masks >> 1) & np.int64(int("01" * L, 2))
    keep = np.flatnonzero((up & dn) == 0)
    Hm = hamiltonian_matrix(H, N)[keep][:, keep]
    w, _ = _lowest(Hm.tocsr())
    return float(w[0])


def energy_vs_N(H: Hamiltonian, N_range: Sequence[int]):
    """Exact E0 per particle number and the lower convex envelope chords."""
    table: List[Tuple[int, float]] = []
    for N in N_range:
        if N == 0:
            table.append((0, 0.0))
        else:
            table.append((int(N), exact_ground(H, N)[0]))
    return table, envelope_chords(table)


def pair_creation_matrix(B: np.ndarray, N: int) -> sp.csr_matrix:
    """Matrix of sum_{ab} B_ab a+_a a+_b from N-2 to N particles."""
    M = B.shape[0]
    src, dst = fock_basis(M, N - 2), fock_basis(M, N)
    terms = [(2.0 * B[a, b], [(a, True), (b, True)])
             for a in range(M) for b in range(a + 1, M) if B[a, b] != 0.0]
    return operator_matrix(src, dst, terms)


def pair_op_max_eig(B: np.ndarray, N: int) -> float:
    """Largest eigenvalue of B+ B on N particles for skew-symmetric B."""
    B = np.asarray(B, dtype=float)
    if not np.allclose(B, -B.T):
        raise ValueError("B must be skew-symmetric")
    M = B.shape[0]
    if N < 2 or N > M:
        return 0.0
    if comb(M, N) > 20_000:
        raise ValueError("Fock dimension exceeds pair-operator cap")
    P = pair_creation_matrix(B, N).toarray()
    small = P.T @ P if P.shape[1] <= P.shape[0] else P @ P.T
    return float(max(np.linalg.eigvalsh(small)[-1], 0.0))

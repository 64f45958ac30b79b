"""Index bookkeeping and containers for the uncoupled spin-orbital basis.

Two-particle matrices are stored densely over ordered pairs ``a < b`` in
lexicographic order.  A four-index element is read through the accessor,
which applies the antisymmetry phase of both pairs.  The ordered-basis trace
``tb_trace`` equals half the full index sum, so a normalized 2DM has trace
N(N-1)/2.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Dict, Iterable, Iterator, Tuple

import numpy as np


@dataclass(frozen=True)
class BasisDims:
    M: int
    N: int

    def __post_init__(self):
        if not (2 <= self.N < self.M):
            raise ValueError(f"need 2 <= N < M, got M={self.M}, N={self.N}")

    @property
    def d2(self) -> int:
        return self.M * (self.M - 1) // 2

    @property
    def d3(self) -> int:
        return self.M * (self.M - 1) * (self.M - 2) // 6

    @property
    def dph(self) -> int:
        return self.M * self.M

    @property
    def dpph(self) -> int:
        return self.M * self.M * (self.M - 1) // 2


def pair_index(a: int, b: int, M: int) -> Tuple[int, int]:
    """Slot of the unordered pair {a, b} and the phase of the given order."""
    if not (0 <= a < M and 0 <= b < M):
        raise ValueError(f"orbital out of range: ({a}, {b}) with M={M}")
    if a == b:
        raise ValueError(f"pair needs distinct orbitals, got ({a}, {a})")
    lo, hi = (a, b) if a < b else (b, a)
    idx = lo * M - lo * (lo + 1) // 2 + (hi - lo - 1)
    return idx, (1 if a < b else -1)


class PairBasis:
    """Lookup tables for ordered pairs and triples of M orbitals."""

    def __init__(self, M: int):
        self.M = M
        iu = np.triu_indices(M, 1)
        self.pa = iu[0].astype(np.intp)
        self.pb = iu[1].astype(np.intp)
        self.d2 = len(self.pa)
        # slot and phase of every ordered (a, b); phase 0 on the diagonal
        self.slot = np.zeros((M, M), dtype=np.intp)
        self.sign = np.zeros((M, M))
        self.slot[self.pa, self.pb] = np.arange(self.d2)
        self.slot[self.pb, self.pa] = np.arange(self.d2)
        self.sign[self.pa, self.pb] = 1.0
        self.sign[self.pb, self.pa] = -1.0
        self._flat = (self.pa * M + self.pb)

        trip = [(a, b, c) for a in range(M) for b in range(a + 1, M) for c in range(b + 1, M)]
        t = np.array(trip, dtype=np.intp).reshape(-1, 3)
        self.ta, self.tb, self.tc = t[:, 0], t[:, 1], t[:, 2]
        self.d3 = len(t)
        self.tslot = np.zeros((M, M, M), dtype=np.intp)
        self.tsign = np.zeros((M, M, M))
        perms = [((0, 1, 2), 1.0), ((1, 2, 0), 1.0), ((2, 0, 1), 1.0),
                 ((1, 0, 2), -1.0), ((0, 2, 1), -1.0), ((2, 1, 0), -1.0)]
        for p, s in perms:
            idx = (t[:, p[0]], t[:, p[1]], t[:, p[2]])
            self.tslot[idx] = np.arange(self.d3)
            self.tsign[idx] = s

    def to_full(self, A: np.ndarray) -> np.ndarray:
        """Expand an ordered-pair matrix into the antisymmetric M^4 tensor."""
        M = self.M
        s = self.sign.ravel()
        P = self.slot.ravel()
        F = A[np.ix_(P, P)] * np.outer(s, s)
        return F.reshape(M, M, M, M)

    def from_full(self, F: np.ndarray) -> np.ndarray:
        """Restrict an M^4 tensor to ordered pairs (no symmetrization)."""
        M = self.M
        return F.reshape(M * M, M * M)[np.ix_(self._flat, self._flat)]

    def fold_full(self, F: np.ndarray) -> np.ndarray:
        """Transpose of ``to_full``: signed sum of the four index orders."""
        F = F - F.transpose(1, 0, 2, 3)
        F = F - F.transpose(0, 1, 3, 2)
        return self.from_full(F)


@lru_cache(maxsize=None)
def basis_for(M: int) -> PairBasis:
    return PairBasis(M)


def d2_of(M: int) -> int:
    return M * (M - 1) // 2


def M_of_d2(d2: int) -> int:
    M = int(round((1 + np.sqrt(1 + 8 * d2)) / 2))
    if M * (M - 1) // 2 != d2:
        raise ValueError(f"{d2} is not a pair-space dimension")
    return M


def element(A: np.ndarray, a: int, b: int, c: int, d: int) -> float:
    """Four-index accessor Gamma_{ab;cd} with antisymmetry phases."""
    M = M_of_d2(A.shape[0])
    if a == b or c == d:
        return 0.0
    i, si = pair_index(a, b, M)
    j, sj = pair_index(c, d, M)
    return si * sj * A[i, j]


def tb_identity(M: int) -> np.ndarray:
    return np.eye(d2_of(M))


def tb_trace(A: np.ndarray) -> float:
    return float(np.trace(A))


def tb_inner(A: np.ndarray, B: np.ndarray) -> float:
    return float(np.vdot(A, B))


def project_traceless(A: np.ndarray) -> np.ndarray:
    d2 = A.shape[0]
    return A - (np.trace(A) / d2) * np.eye(d2)


def sym(A: np.ndarray) -> np.ndarray:
    return 0.5 * (A + A.T)


def gamma_bar(A: np.ndarray) -> np.ndarray:
    """Partial trace sum_b A_{ab;cb} as an M x M matrix."""
    pb = basis_for(M_of_d2(A.shape[0]))
    return np.einsum("abcb->ac", pb.to_full(A))


def wedge_from_rho(rho: np.ndarray) -> np.ndarray:
    """Uncorrelated 2DM rho ^ rho over ordered pairs."""
    pb = basis_for(rho.shape[0])
    a, b = pb.pa, pb.pb
    return (rho[np.ix_(a, a)] * rho[np.ix_(b, b)] - rho[np.ix_(a, b)] * rho[np.ix_(b, a)])


def save_two_body(path, A: np.ndarray, N: int) -> None:
    M = M_of_d2(A.shape[0])
    with open(path, "w") as fh:
        fh.write(f"{M} {N} {A.shape[0]}\n")
        for row in A:
            fh.write(" ".join(f"{v:.17g}" for v in row) + "\n")


def load_two_body(path) -> Tuple[np.ndarray, int]:
    with open(path) as fh:
        head = fh.readline().split()
        if len(head) != 3:
            raise ValueError(f"{path}:1: expected 'M N d2' header")
        M, N, d2 = (int(x) for x in head)
        if d2 != d2_of(M):
            raise ValueError(f"{path}:1: d2={d2} inconsistent with M={M}")
        A = np.loadtxt(fh, ndmin=2)
    if A.shape != (d2, d2):
        raise ValueError(f"{path}: expected {d2}x{d2} values, got {A.shape}")
    return A, N


class Carrier:
    """Block-diagonal matrix over the carrier space.

    Blocks are keyed by condition label and kept in insertion order.  A 1-D
    block stands for a diagonal matrix (linear inequalities).
    """

    __slots__ = ("blocks",)

    def __init__(self, blocks: Dict[str, np.ndarray] | Iterable[Tuple[str, np.ndarray]]):
        self.blocks = dict(blocks)

    def labels(self) -> Tuple[str, ...]:
        return tuple(self.blocks)

    def __getitem__(self, key: str) -> np.ndarray:
        return self.blocks[key]

    def __iter__(self) -> Iterator[Tuple[str, np.ndarray]]:
        return iter(self.blocks.items())

    def _check(self, other: "Carrier") -> None:
        if self.labels() != other.labels():
            raise ValueError(f"carrier structure mismatch: {self.labels()} vs {other.labels()}")
        for k, v in self.blocks.items():
            if v.shape != other.blocks[k].shape:
                raise ValueError(f"block {k} shape mismatch")

    def map(self, fn) -> "Carrier":
        return Carrier({k: fn(v) for k, v in self.blocks.items()})

    def zip_map(self, other: "Carrier", fn) -> "Carrier":
        self._check(other)
        return Carrier({k: fn(v, other.blocks[k]) for k, v in self.blocks.items()})

    def __add__(self, other: "Carrier") -> "Carrier":
        return self.zip_map(other, np.add)

    def __sub__(self, other: "Carrier") -> "Carrier":
        return self.zip_map(other, np.subtract)

    def __mul__(self, s: float) -> "Carrier":
        return self.map(lambda v: s * v)

    __rmul__ = __mul__

    def __neg__(self) -> "Carrier":
        return self.map(np.negative)

    def copy(self) -> "Carrier":
        return self.map(np.copy)

    def trace(self) -> float:
        return float(sum(v.sum() if v.ndim == 1 else np.trace(v) for v in self.blocks.values()))

    def dim(self) -> int:
        return int(sum(v.shape[0] for v in self.blocks.values()))

    def norm(self) -> float:
        return float(np.sqrt(carrier_inner(self, self)))

    @staticmethod
    def zeros_like(other: "Carrier") -> "Carrier":
        return other.map(np.zeros_like)


def carrier_inner(A: Carrier, B: Carrier) -> float:
    A._check(B)
    return float(sum(np.vdot(a, B.blocks[k]) for k, a in A.blocks.items()))

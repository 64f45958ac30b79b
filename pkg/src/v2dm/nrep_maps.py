"""Linear N-representability maps of the 2DM and their Hermitian adjoints.

Every map is assembled once per (M, N) as a sparse matrix acting on the
row-major flattening of an ordered-pair matrix.  The adjoint is the
transpose of that matrix followed by symmetrization, so the identity
<L(G), A> = <G, L^T(A)> holds by construction.  Constant terms carry the
homogenizing factor 2 tr(G) / (N(N-1)), which makes every map linear.

Index conventions: G_{ab;cd} = <a+_a a+_b a_d a_c>, rho_{ac} = <a+_a a_c>.
The particle-hole matrix is indexed by (a*M + b); the pph space by
(pair slot * M + hole); the T2' extension appends M rows.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from .pair_basis import Carrier, basis_for, M_of_d2, project_traceless, sym

ALL_CONDITIONS = ("I", "Q", "G", "T1", "T2", "T2P", "GutzRho", "GutzQ")
_ALIASES = {"T2'": "T2P", "T2PRIME": "T2P", "GUTZ": ("GutzRho", "GutzQ"),
            "GUTZRHO": "GutzRho", "GUTZQ": "GutzQ"}


@dataclass(frozen=True)
class ConditionSet:
    """Ordered set of active conditions; I is always present."""

    labels: Tuple[str, ...]

    def __post_init__(self):
        labs = tuple(self.labels)
        for lab in labs:
            if lab not in ALL_CONDITIONS:
                raise ValueError(f"unknown condition {lab!r}")
        if len(set(labs)) != len(labs):
            raise ValueError(f"duplicate condition in {labs}")
        if "I" not in labs:
            raise ValueError("condition I must be present")
        if "T2" in labs and "T2P" in labs:
            raise ValueError("T2 and T2P are mutually exclusive")
        ordered = tuple(c for c in ALL_CONDITIONS if c in labs)
        object.__setattr__(self, "labels", ordered)

    @classmethod
    def parse(cls, spec: str | Iterable[str]) -> "ConditionSet":
        items = spec.split(",") if isinstance(spec, str) else list(spec)
        out: List[str] = []
        for raw in items:
            tok = raw.strip()
            if not tok:
                continue
            key = _ALIASES.get(tok.upper(), tok if tok in ALL_CONDITIONS else tok.upper())
            if isinstance(key, tuple):
                out.extend(key)
            else:
                out.append(key)
        if "I" not in out:
            out.insert(0, "I")
        return cls(tuple(out))

    def __contains__(self, lab: str) -> bool:
        return lab in self.labels

    def __iter__(self):
        return iter(self.labels)

    @property
    def has_gutzwiller(self) -> bool:
        return "GutzRho" in self.labels or "GutzQ" in self.labels


class _Builder:
    """Collects (image entry, Gamma entry, coefficient) triplets."""

    def __init__(self, M: int, N: int, dim: int):
        self.M, self.N, self.dim = M, N, dim
        self.pb = basis_for(M)
        self.d2 = self.pb.d2
        self.rows: List[np.ndarray] = []
        self.cols: List[np.ndarray] = []
        self.vals: List[np.ndarray] = []

    def gamma(self, rows, a, b, c, d, coef=1.0):
        pb = self.pb
        s = pb.sign[a, b] * pb.sign[c, d] * coef
        s = np.broadcast_to(s, np.shape(rows))
        keep = s != 0
        if not np.any(keep):
            return
        rows = np.asarray(rows)[keep]
        col = pb.slot[a, b] * self.d2 + pb.slot[c, d]
        col = np.broadcast_to(col, keep.shape)[keep]
        self.rows.append(rows)
        self.cols.append(col)
        self.vals.append(s[keep])

    def rho(self, rows, a, c, coef=1.0):
        # rho_{ac} = 1/(N-1) sum_g G_{ag;cg}
        rows, a, c, coef = (x.reshape(-1) for x in np.broadcast_arrays(
            np.asarray(rows), np.asarray(a), np.asarray(c), np.asarray(coef, dtype=float)))
        M = self.M
        g = np.tile(np.arange(M), rows.size)
        self.gamma(np.repeat(rows, M), np.repeat(a, M), g, np.repeat(c, M), g,
                   np.repeat(coef, M) / (self.N - 1))

    def hom(self, rows, coef=1.0):
        # 2 tr(G) / (N(N-1)) with tr over ordered pairs
        rows, coef = np.broadcast_arrays(np.asarray(rows).reshape(-1),
                                         np.asarray(coef, dtype=float).reshape(-1))
        p = np.arange(self.d2)
        scale = 2.0 / (self.N * (self.N - 1))
        self.rows.append(np.repeat(rows, self.d2))
        self.cols.append(np.tile(p * self.d2 + p, rows.size))
        self.vals.append(np.repeat(coef * scale, self.d2))

    def build(self) -> sp.csr_matrix:
        if self.rows:
            r = np.concatenate(self.rows)
            c = np.concatenate(self.cols)
            v = np.concatenate(self.vals)
        else:
            r = c = np.zeros(0, dtype=np.intp)
            v = np.zeros(0)
        S = sp.coo_matrix((v, (r, c)), shape=(self.dim * self.dim, self.d2 * self.d2))
        S = S.tocsr()
        S.sum_duplicates()
        S.eliminate_zeros()
        return S


def _grid(n: int):
    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    return i.ravel(), j.ravel()


def _build_Q(M: int, N: int) -> sp.csr_matrix:
    B = _Builder(M, N, M * (M - 1) // 2)
    pb = B.pb
    p, q = _grid(B.d2)
    rows = p * B.d2 + q
    a, b, c, d = pb.pa[p], pb.pb[p], pb.pa[q], pb.pb[q]
    B.hom(rows[p == q])
    B.gamma(rows, a, b, c, d)
    m = a == c
    B.rho(rows[m], b[m], d[m], -1.0)
    m = a == d
    B.rho(rows[m], b[m], c[m], 1.0)
    m = b == c
    B.rho(rows[m], a[m], d[m], 1.0)
    m = b == d
    B.rho(rows[m], a[m], c[m], -1.0)
    return B.build()


def _build_G(M: int, N: int) -> sp.csr_matrix:
    B = _Builder(M, N, M * M)
    r, s = _grid(M * M)
    rows = r * M * M + s
    a, b = r // M, r % M
    c, d = s // M, s % M
    m = b == d
    B.rho(rows[m], a[m], c[m], 1.0)
    B.gamma(rows, a, d, c, b, -1.0)
    return B.build()


def _build_T1(M: int, N: int) -> sp.csr_matrix:
    pb = basis_for(M)
    B = _Builder(M, N, pb.d3)
    r, s = _grid(pb.d3)
    rows = r * pb.d3 + s
    a, b, c = pb.ta[r], pb.tb[r], pb.tc[r]
    d, e, f = pb.ta[s], pb.tb[s], pb.tc[s]
    D = lambda x, y: x == y  # noqa: E731

    hom_terms = [
        (D(c, f) & D(b, e) & D(a, d), 1), (D(c, e) & D(a, d) & D(b, f), -1),
        (D(a, f) & D(c, e) & D(b, d), 1), (D(c, f) & D(a, e) & D(b, d), -1),
        (D(b, f) & D(a, e) & D(c, d), 1), (D(a, f) & D(b, e) & D(c, d), -1),
    ]
    for m, sgn in hom_terms:
        B.hom(rows[m], float(sgn))

    rho_terms = [
        (D(c, f) & D(b, e), -1, a, d), (D(b, f) & D(c, e), 1, a, d),
        (D(c, f) & D(a, e), 1, b, d), (D(a, f) & D(c, e), -1, b, d),
        (D(b, f) & D(a, e), -1, c, d), (D(a, f) & D(b, e), 1, c, d),
        (D(c, f) & D(b, d), 1, a, e), (D(b, f) & D(c, d), -1, a, e),
        (D(c, f) & D(a, d), -1, e, b), (D(a, f) & D(c, d), 1, e, b),
        (D(b, f) & D(a, d), 1, c, e), (D(a, f) & D(b, d), -1, c, e),
        (D(b, d) & D(c, e), -1, a, f), (D(b, e) & D(c, d), 1, a, f),
        (D(c, e) & D(a, d), 1, b, f), (D(a, e) & D(c, d), -1, b, f),
        (D(b, e) & D(a, d), -1, c, f), (D(a, e) & D(b, d), 1, c, f),
    ]
    for m, sgn, x, y in rho_terms:
        B.rho(rows[m], x[m], y[m], float(sgn))

    gam_terms = [
        (D(c, f), 1, (a, b, d, e)), (D(b, f), -1, (a, c, d, e)), (D(a, f), 1, (b, c, d, e)),
        (D(c, e), -1, (a, b, d, f)), (D(b, e), 1, (a, c, d, f)), (D(a, e), -1, (b, c, d, f)),
        (D(c, d), 1, (a, b, e, f)), (D(b, d), -1, (a, c, e, f)), (D(a, d), 1, (b, c, e, f)),
    ]
    for m, sgn, (i, j, k, l) in gam_terms:
        B.gamma(rows[m], i[m], j[m], k[m], l[m], float(sgn))
    return B.build()


def _t2_terms(B: _Builder, rows, a, b, c, d, e, f):
    m = (a == d) & (b == e)
    B.rho(rows[m], c[m], f[m], 1.0)
    m = (a == e) & (b == d)
    B.rho(rows[m], c[m], f[m], -1.0)
    m = c == f
    B.gamma(rows[m], a[m], b[m], d[m], e[m], 1.0)
    m = a == d
    B.gamma(rows[m], c[m], e[m], f[m], b[m], -1.0)
    m = b == d
    B.gamma(rows[m], c[m], e[m], f[m], a[m], 1.0)
    m = a == e
    B.gamma(rows[m], c[m], d[m], f[m], b[m], 1.0)
    m = b == e
    B.gamma(rows[m], c[m], d[m], f[m], a[m], -1.0)


def _build_T2(M: int, N: int, prime: bool = False) -> sp.csr_matrix:
    pb = basis_for(M)
    n = pb.d2 * M
    dim = n + (M if prime else 0)
    B = _Builder(M, N, dim)
    r, s = _grid(n)
    rows = r * dim + s
    a, b, c = pb.pa[r // M], pb.pb[r // M], r % M
    d, e, f = pb.pa[s // M], pb.pb[s // M], s % M
    _t2_terms(B, rows, a, b, c, d, e, f)
    if prime:
        # omega_{abc;nu} = G_{ab;nu c} and its transpose, rho corner
        r, nu = np.meshgrid(np.arange(n), np.arange(M), indexing="ij")
        r, nu = r.ravel(), nu.ravel()
        a, b, c = pb.pa[r // M], pb.pb[r // M], r % M
        B.gamma(r * dim + n + nu, a, b, nu, c, 1.0)
        B.gamma((n + nu) * dim + r, a, b, nu, c, 1.0)
        mu, nu = _grid(M)
        B.rho((n + mu) * dim + n + nu, mu, nu, 1.0)
    return B.build()


def _build_gutz(M: int, N: int, which: str) -> sp.csr_matrix:
    if M % 2:
        raise ValueError("Gutzwiller maps need an even number of spin-orbitals")
    B = _Builder(M, N, M)
    a, b = _grid(M)
    rows = a * M + b
    abar, bbar = a ^ 1, b ^ 1
    diag = a == b
    if which == "rho":
        B.rho(rows, a, b, 1.0)
        B.gamma(rows, a, bbar, b, bbar, -1.0)
        B.gamma(rows, a, abar, b, abar, -1.0)
        B.rho(rows[diag], abar[diag], abar[diag], 1.0)
    else:
        B.gamma(rows, bbar, b, bbar, a, 1.0)
        B.gamma(rows, abar, b, abar, a, 1.0)
        B.rho(rows, a, b, -1.0)
        B.hom(rows[diag], 1.0)
        B.rho(rows[diag], abar[diag], abar[diag], -1.0)
        # spin-flip corner: needed once the state mixes S_z sectors
        flip = b == abar
        B.rho(rows[flip], abar[flip], a[flip], 1.0)
    return B.build()


def _build_rho(M: int, N: int) -> sp.csr_matrix:
    B = _Builder(M, N, M)
    a, b = _grid(M)
    B.rho(a * M + b, a, b, 1.0)
    return B.build()


class LinearMap:
    """A sparse linear map from ordered-pair matrices to square matrices."""

    def __init__(self, name: str, S: sp.csr_matrix, dim: int, d2: int):
        self.name = name
        self.S = S
        self.ST = S.T.tocsr()
        self.dim = dim
        self.d2 = d2

    def __call__(self, G: np.ndarray) -> np.ndarray:
        return (self.S @ G.ravel()).reshape(self.dim, self.dim)

    def adjoint(self, A: np.ndarray) -> np.ndarray:
        if A.shape != (self.dim, self.dim):
            raise ValueError(f"{self.name} adjoint expects {self.dim}x{self.dim}, got {A.shape}")
        return sym((self.ST @ A.ravel()).reshape(self.d2, self.d2))


_BUILDERS = {
    "I": None,
    "Q": _build_Q,
    "G": _build_G,
    "T1": _build_T1,
    "T2": lambda M, N: _build_T2(M, N, False),
    "T2P": lambda M, N: _build_T2(M, N, True),
    "GutzRho": lambda M, N: _build_gutz(M, N, "rho"),
    "GutzQ": lambda M, N: _build_gutz(M, N, "q"),
    "rho": _build_rho,
}


def image_dim(label: str, M: int) -> int:
    d2 = M * (M - 1) // 2
    return {"I": d2, "Q": d2, "G": M * M, "T1": M * (M - 1) * (M - 2) // 6,
            "T2": d2 * M, "T2P": d2 * M + M, "GutzRho": M, "GutzQ": M, "rho": M}[label]


@lru_cache(maxsize=64)
def linear_map(label: str, M: int, N: int) -> LinearMap:
    if label not in _BUILDERS:
        raise ValueError(f"unknown map {label!r}")
    if label in ("T1", "T2", "T2P") and M < 3:
        raise ValueError(f"{label} needs M >= 3")
    d2 = M * (M - 1) // 2
    if label == "I":
        S = sp.identity(d2 * d2, format="csr")
    else:
        S = _BUILDERS[label](M, N)
    return LinearMap(label, S, image_dim(label, M), d2)


def _lm(label: str, G: np.ndarray, N: int) -> LinearMap:
    return linear_map(label, M_of_d2(G.shape[0]), N)


def rho_from_gamma(G: np.ndarray, N: int) -> np.ndarray:
    if N < 2:
        raise ValueError("N must be at least 2")
    return _lm("rho", G, N)(G)


def map_Q(G: np.ndarray, N: int) -> np.ndarray:
    return _lm("Q", G, N)(G)


def map_G(G: np.ndarray, N: int) -> np.ndarray:
    return _lm("G", G, N)(G)


def map_G_prime(G: np.ndarray, N: int) -> np.ndarray:
    rv = rho_from_gamma(G, N).ravel()
    return map_G(G, N) - np.outer(rv, rv)


def map_T1(G: np.ndarray, N: int) -> np.ndarray:
    return _lm("T1", G, N)(G)


def map_T2(G: np.ndarray, N: int) -> np.ndarray:
    return _lm("T2", G, N)(G)


def map_T2prime(G: np.ndarray, N: int) -> np.ndarray:
    return _lm("T2P", G, N)(G)


def map_gutz_rho(G: np.ndarray, N: int) -> np.ndarray:
    return _lm("GutzRho", G, N)(G)


def map_gutz_q(G: np.ndarray, N: int) -> np.ndarray:
    return _lm("GutzQ", G, N)(G)


def _adj(label: str, A: np.ndarray, N: int, M: int) -> np.ndarray:
    return linear_map(label, M, N).adjoint(A)


def _M_from_image(label: str, n: int) -> int:
    for M in range(2, 64):
        if image_dim(label, M) == n:
            return M
        if image_dim(label, M) > n:
            break
    raise ValueError(f"no M gives a {label} image of dimension {n}")


def adj_Q(A: np.ndarray, N: int) -> np.ndarray:
    return _adj("Q", A, N, M_of_d2(A.shape[0]))


def adj_G(A: np.ndarray, N: int) -> np.ndarray:
    return _adj("G", A, N, _M_from_image("G", A.shape[0]))


def adj_T1(A: np.ndarray, N: int) -> np.ndarray:
    return _adj("T1", A, N, _M_from_image("T1", A.shape[0]))


def adj_T2(A: np.ndarray, N: int) -> np.ndarray:
    return _adj("T2", A, N, _M_from_image("T2", A.shape[0]))


def adj_T2prime(A: np.ndarray, N: int) -> np.ndarray:
    return _adj("T2P", A, N, _M_from_image("T2P", A.shape[0]))


def adj_gutz_rho(A: np.ndarray, N: int) -> np.ndarray:
    return _adj("GutzRho", A, N, A.shape[0])


def adj_gutz_q(A: np.ndarray, N: int) -> np.ndarray:
    return _adj("GutzQ", A, N, A.shape[0])


def adj_rho(A: np.ndarray, N: int) -> np.ndarray:
    return _adj("rho", A, N, A.shape[0])


def apply_conditions(G: np.ndarray, cs: ConditionSet, N: int,
                     ineqs: Sequence[np.ndarray] = ()) -> Carrier:
    """Z(G): one block per condition, plus a diagonal block for inequalities."""
    M = M_of_d2(G.shape[0])
    blocks: Dict[str, np.ndarray] = {}
    for lab in cs:
        blocks[lab] = G.copy() if lab == "I" else linear_map(lab, M, N)(G)
    if len(ineqs):
        blocks["LinIneq"] = np.array([np.vdot(G, C) for C in ineqs])
    return Carrier(blocks)


def adjoint_sum(A: Carrier, N: int, ineqs: Sequence[np.ndarray] = ()) -> np.ndarray:
    """sum_k L_k^T(A_k) without the traceless projection."""
    out = None
    for lab, blk in A:
        if lab == "LinIneq":
            part = np.tensordot(blk, np.asarray(ineqs), axes=1) if len(ineqs) else 0.0
        elif lab == "I":
            part = sym(blk)
        else:
            M = _M_from_image(lab, blk.shape[0])
            part = linear_map(lab, M, N).adjoint(blk)
        out = part if out is None else out + part
    return out


def collapse(A: Carrier, N: int, ineqs: Sequence[np.ndarray] = ()) -> np.ndarray:
    return project_traceless(adjoint_sum(A, N, ineqs))

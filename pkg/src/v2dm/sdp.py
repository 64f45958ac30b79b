"""Problem definition and the block layout shared by the three solvers.

The dual variable is the 2DM G itself; the carrier matrix is
Z(G) = (+)_k L_k(G) plus a diagonal block of linear inequalities.  When the
Hamiltonian and constraints conserve a quantum number in the orbital basis
(S_z for Hubbard lattices), each carrier block splits into exact sectors.
``Layout`` finds those sectors once, by closing the sparsity pattern of G
under every map and its adjoint, and stores compressed sparse maps that act
on the sector blocks directly.  All eigendecompositions, inverses and
products then run per sector.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .constraints import LinearEquality, LinearInequality, NonlinHopping
from .nrep_maps import ConditionSet, linear_map
from .pair_basis import Carrier, d2_of, sym


class InfeasibleStart(ValueError):
    pass


@dataclass
class SDPProblem:
    M: int
    N: int
    H2: np.ndarray
    conditions: ConditionSet
    equalities: List[LinearEquality] = field(default_factory=list)
    inequalities: List[LinearInequality] = field(default_factory=list)
    nonlin: Optional[NonlinHopping] = None
    start: Optional[np.ndarray] = None
    deflate: Dict[str, np.ndarray] = field(default_factory=dict)
    label: str = ""

    def __post_init__(self):
        if not (2 <= self.N < self.M):
            raise ValueError(f"need 2 <= N < M, got M={self.M}, N={self.N}")
        d2 = d2_of(self.M)
        if self.H2.shape != (d2, d2):
            raise ValueError(f"H2 must be {d2}x{d2}")
        if self.conditions.has_gutzwiller and self.M % 2:
            raise ValueError("Gutzwiller conditions need an even number of spin-orbitals")
        if self.start is not None and self.start.shape != (d2, d2):
            raise ValueError("start matrix has the wrong shape")
        for q in self.equalities:
            if q.E.shape != (d2, d2):
                raise ValueError("equality matrix has the wrong shape")
        for q in self.inequalities:
            if q.C.shape != (d2, d2):
                raise ValueError("inequality matrix has the wrong shape")
            if q.N != self.N:
                raise ValueError("inequality built for a different particle number")
        if self.equalities and self.start is None:
            raise ValueError("equality constraints need an explicit feasible start")

    @property
    def d2(self) -> int:
        return d2_of(self.M)

    @property
    def gamma0(self) -> np.ndarray:
        if self.start is not None:
            return self.start
        c = self.N * (self.N - 1) / (self.M * (self.M - 1))
        return c * np.eye(self.d2)

    def energy(self, G: np.ndarray) -> float:
        return float(np.vdot(G, self.H2))


# -- projection on the affine directions ----------------------------------

class Projector:
    """Orthogonal projection on traceless matrices that also keep every
    equality constraint fixed."""

    def __init__(self, d2: int, equalities: Sequence[LinearEquality] = ()):
        vecs = [np.eye(d2).ravel()] + [q.E.ravel() for q in equalities]
        A = np.array(vecs).T
        U, s, _ = np.linalg.svd(A, full_matrices=False)
        keep = s > 1e-10 * s[0]
        self.Q = U[:, keep].T.copy()
        self.d2 = d2

    @property
    def rank(self) -> int:
        return self.Q.shape[0]

    def __call__(self, X: np.ndarray) -> np.ndarray:
        v = X.ravel()
        return (v - self.Q.T @ (self.Q @ v)).reshape(X.shape)


# -- packed block carrier ---------------------------------------------------

class Blocks:
    """Sector blocks of a carrier matrix plus the inequality diagonal."""

    __slots__ = ("mats", "lin")

    def __init__(self, mats: List[np.ndarray], lin: np.ndarray):
        self.mats = mats
        self.lin = lin

    def __add__(self, o: "Blocks") -> "Blocks":
        return Blocks([a + b for a, b in zip(self.mats, o.mats)], self.lin + o.lin)

    def __sub__(self, o: "Blocks") -> "Blocks":
        return Blocks([a - b for a, b in zip(self.mats, o.mats)], self.lin - o.lin)

    def __mul__(self, s: float) -> "Blocks":
        return Blocks([s * a for a in self.mats], s * self.lin)

    __rmul__ = __mul__

    def __neg__(self) -> "Blocks":
        return self * -1.0

    def copy(self) -> "Blocks":
        return Blocks([a.copy() for a in self.mats], self.lin.copy())

    def inner(self, o: "Blocks") -> float:
        return float(sum(np.vdot(a, b) for a, b in zip(self.mats, o.mats)) + self.lin @ o.lin)

    def norm(self) -> float:
        return float(np.sqrt(self.inner(self)))

    def trace(self) -> float:
        return float(sum(np.trace(a) for a in self.mats) + self.lin.sum())

    @property
    def n(self) -> int:
        return int(sum(a.shape[0] for a in self.mats) + self.lin.size)


def _sector_eigh(A: np.ndarray):
    return np.linalg.eigh(A)


class Eig:
    """Per-block eigendecomposition with helpers for matrix functions."""

    def __init__(self, B: Blocks):
        self.parts = [_sector_eigh(a) for a in B.mats]
        self.lin = B.lin.copy()

    def min(self) -> float:
        vals = [w[0] for w, _ in self.parts if w.size]
        if self.lin.size:
            vals.append(self.lin.min())
        return float(min(vals))

    def fn(self, f) -> Blocks:
        mats = [(V * f(w)) @ V.T for w, V in self.parts]
        return Blocks(mats, f(self.lin))

    def logdet(self) -> float:
        return float(sum(np.log(w).sum() for w, _ in self.parts) + np.log(self.lin).sum())


def bmul(A: Blocks, B: Blocks) -> Blocks:
    return Blocks([a @ b for a, b in zip(A.mats, B.mats)], A.lin * B.lin)


def sandwich(A: Blocks, X: Blocks) -> Blocks:
    """A X A per block."""
    return Blocks([a @ x @ a for a, x in zip(A.mats, X.mats)], A.lin * X.lin * A.lin)


def gen_eigvals(Z: Blocks, D: Blocks) -> np.ndarray:
    """Eigenvalues of Z^{-1/2} D Z^{-1/2} over all blocks."""
    from scipy.linalg import eigh

    out = [eigh(d, z, eigvals_only=True) for z, d in zip(Z.mats, D.mats)]
    out.append(D.lin / Z.lin)
    return np.concatenate(out) if out else np.zeros(0)


# -- sector layout --------------------------------------------------------

def _components(n: int, rows: np.ndarray, cols: np.ndarray) -> List[np.ndarray]:
    A = sp.coo_matrix((np.ones(rows.size), (rows, cols)), shape=(n, n))
    k, lab = connected_components(A, directed=False)
    order = np.argsort(lab, kind="stable")
    counts = np.bincount(lab, minlength=k)
    return [np.sort(c) for c in np.split(order, np.cumsum(counts)[:-1])]


def _block_mask_vec(comps: List[np.ndarray], n: int) -> np.ndarray:
    m = np.zeros(n * n, dtype=bool)
    for c in comps:
        m[(c[:, None] * n + c[None, :]).ravel()] = True
    return m


def _flat(comps: List[np.ndarray], n: int) -> np.ndarray:
    if not comps:
        return np.zeros(0, dtype=np.intp)
    return np.concatenate([(c[:, None] * n + c[None, :]).ravel() for c in comps])


class _BlockMap:
    def __init__(self, label: str, dim: int, comps: List[np.ndarray], Sc: Optional[sp.csr_matrix],
                 defl: List[Optional[np.ndarray]]):
        self.label = label
        self.dim = dim
        self.comps = comps
        self.Sc = Sc
        self.ScT = Sc.T.tocsr() if Sc is not None else None
        self.sizes = [len(c) for c in comps]
        self.offsets = np.concatenate([[0], np.cumsum([s * s for s in self.sizes])])
        self.defl = defl


class Layout:
    """Sector structure and compressed maps for one problem."""

    def __init__(self, problem: SDPProblem, split: bool = True):
        self.problem = problem
        M, N, d2 = problem.M, problem.N, problem.d2
        self.d2 = d2
        labels = list(problem.conditions)
        maps = {lab: linear_map(lab, M, N) for lab in labels if lab != "I"}
        struct = {lab: abs(L.S).astype(bool).astype(np.float64).tocsr() for lab, L in maps.items()}

        if split:
            gcomps = self._close(problem, labels, maps, struct)
        else:
            gcomps = [np.arange(d2)]
        self.gcomps = gcomps
        self.gidx = _flat(gcomps, d2)
        gvec = np.zeros(d2 * d2, dtype=bool)
        gvec[self.gidx] = True

        self.blocks: List[_BlockMap] = []
        for lab in labels:
            if lab == "I":
                comps = gcomps
                Sc = None
                dim = d2
            else:
                dim = maps[lab].dim
                comps = self._image_components(struct[lab], gvec, dim) if split else [np.arange(dim)]
                rows = _flat(comps, dim)
                Sc = maps[lab].S[rows][:, self.gidx].tocsr()
            defl = self._deflation(problem.deflate.get(lab), comps, dim)
            self.blocks.append(_BlockMap(lab, dim, comps, Sc, defl))

        C0 = [q.C0.ravel()[self.gidx] for q in problem.inequalities]
        self.C0 = np.array(C0) if C0 else np.zeros((0, self.gidx.size))
        self.owner: List[Tuple[str, int]] = [(b.label, k) for b in self.blocks for k in range(len(b.comps))]

    # closure of the sparsity pattern of G under all maps and adjoints
    def _close(self, problem, labels, maps, struct) -> List[np.ndarray]:
        d2 = problem.d2
        seeds = [problem.H2, problem.gamma0] + [q.E for q in problem.equalities] \
            + [q.C for q in problem.inequalities]
        if problem.nonlin is not None:
            seeds += [problem.nonlin.T, problem.nonlin.one_P]
        pat = np.zeros((d2, d2), dtype=bool)
        for s in seeds:
            pat |= s != 0
        pat |= np.eye(d2, dtype=bool)
        r, c = np.nonzero(pat)
        while True:
            comps = _components(d2, r, c)
            gvec = _block_mask_vec(comps, d2)
            extra = np.zeros(d2 * d2, dtype=bool)
            for lab in labels:
                if lab == "I":
                    continue
                ic = self._image_components(struct[lab], gvec, maps[lab].dim)
                ivec = _block_mask_vec(ic, maps[lab].dim)
                extra |= (struct[lab].T @ ivec.astype(np.float64)) != 0
            new = extra & ~gvec
            if not new.any():
                return comps
            nr, nc = np.divmod(np.flatnonzero(extra | gvec), d2)
            r, c = nr, nc

    @staticmethod
    def _image_components(S: sp.csr_matrix, gvec: np.ndarray, dim: int) -> List[np.ndarray]:
        hit = np.flatnonzero((S @ gvec.astype(np.float64)) != 0)
        i, j = np.divmod(hit, dim)
        touched = np.zeros(dim, dtype=bool)
        touched[i] = True
        touched[j] = True
        comps = _components(dim, i, j)
        # indices whose rows vanish identically carry no constraint
        return [c for c in comps if touched[c].all()]

    @staticmethod
    def _deflation(vecs, comps, dim):
        if vecs is None:
            return [None] * len(comps)
        vecs = np.asarray(vecs, dtype=float).reshape(dim, -1)
        out = []
        for c in comps:
            sub = vecs[c]
            sub = sub[:, np.linalg.norm(sub, axis=0) > 1e-12]
            if sub.shape[1] == 0:
                out.append(None)
                continue
            U, s, _ = np.linalg.svd(sub, full_matrices=True)
            r = int(np.sum(s > 1e-10 * s[0]))
            out.append(U[:, r:].copy())
        return out

    # -- maps --------------------------------------------------------------
    @property
    def n(self) -> int:
        n = 0
        for b in self.blocks:
            for c, P in zip(b.comps, b.defl):
                n += len(c) if P is None else P.shape[1]
        return n + self.C0.shape[0]

    def forward(self, G: np.ndarray) -> Blocks:
        v = G.ravel()[self.gidx]
        mats: List[np.ndarray] = []
        for b in self.blocks:
            w = v if b.Sc is None else b.Sc @ v
            for k, n in enumerate(b.sizes):
                A = w[b.offsets[k]:b.offsets[k + 1]].reshape(n, n)
                P = b.defl[k]
                mats.append(A.copy() if P is None else P.T @ A @ P)
        lin = self.C0 @ v
        return Blocks(mats, lin)

    def adjoint(self, A: Blocks) -> np.ndarray:
        u = np.zeros(self.gidx.size)
        i = 0
        for b in self.blocks:
            parts = []
            for k in range(len(b.sizes)):
                P = b.defl[k]
                X = A.mats[i]
                parts.append((X if P is None else P @ X @ P.T).ravel())
                i += 1
            w = np.concatenate(parts) if parts else np.zeros(0)
            u += w if b.ScT is None else b.ScT @ w
        if A.lin.size:
            u += self.C0.T @ A.lin
        G = np.zeros(self.d2 * self.d2)
        G[self.gidx] = u
        return sym(G.reshape(self.d2, self.d2))

    def lift(self, A: Blocks) -> List[np.ndarray]:
        """Per-block matrices in full sector coordinates (P A P^T)."""
        out, i = [], 0
        for b in self.blocks:
            for P in b.defl:
                X = A.mats[i]
                out.append(X if P is None else P @ X @ P.T)
                i += 1
        return out

    def zeros(self) -> Blocks:
        mats = []
        for b in self.blocks:
            for c, P in zip(b.comps, b.defl):
                n = len(c) if P is None else P.shape[1]
                mats.append(np.zeros((n, n)))
        return Blocks(mats, np.zeros(self.C0.shape[0]))

    def identity(self) -> Blocks:
        Z = self.zeros()
        return Blocks([np.eye(a.shape[0]) for a in Z.mats], np.ones_like(Z.lin))

    def to_carrier(self, A: Blocks) -> Carrier:
        """Scatter sector blocks back into full dense condition blocks."""
        out: Dict[str, np.ndarray] = {}
        i = 0
        for b in self.blocks:
            full = np.zeros((b.dim, b.dim))
            for c, P in zip(b.comps, b.defl):
                X = A.mats[i]
                full[np.ix_(c, c)] = X if P is None else P @ X @ P.T
                i += 1
            out[b.label] = full
        if A.lin.size:
            out["LinIneq"] = A.lin.copy()
        return Carrier(out)

    def sector_sizes(self) -> Dict[str, List[int]]:
        return {b.label: list(b.sizes) for b in self.blocks}


# -- explicit Newton systems -------------------------------------------------

class ReducedBasis:
    """Orthonormal coordinates for symmetric matrices inside the sector
    pattern, and assembly of Schur matrices
    H_ij = sum_k <L(e_i), W L(e_j) W> + sum_l w_l <C0_l, e_i> <C0_l, e_j>.

    Off-diagonal coordinates carry a 1/sqrt 2 so the map to matrices is an
    isometry.  The trace and equality directions are kept as a constraint
    matrix and handled in ``solve``.
    """

    def __init__(self, layout: "Layout", projector: Projector, chunk_doubles: int = 4_000_000):
        d2 = layout.d2
        self.lay = layout
        self.chunk_doubles = chunk_doubles
        pos = np.full(d2 * d2, -1, dtype=np.intp)
        pos[layout.gidx] = np.arange(layout.gidx.size)
        rows, cols, vals = [], [], []
        p = 0
        for c in layout.gcomps:
            iu, ju = np.triu_indices(len(c))
            a, b = c[iu], c[ju]
            k = np.arange(p, p + a.size)
            diag = a == b
            w = np.where(diag, 1.0, 1.0 / np.sqrt(2.0))
            rows += [pos[a * d2 + b], pos[b * d2 + a][~diag]]
            cols += [k, k[~diag]]
            vals += [w, w[~diag]]
            p += a.size
        self.B = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                               shape=(layout.gidx.size, p))
        self.dim = p
        self.parts = []
        for b in layout.blocks:
            Y = self.B.tocsc() if b.Sc is None else (b.Sc @ self.B).tocsc()
            for k, n in enumerate(b.sizes):
                self.parts.append(self._prepare(Y[b.offsets[k]:b.offsets[k + 1]], n))
        Qp = np.asarray((self.B.T @ projector.Q[:, layout.gidx].T).T)
        self.Qc = Qp[np.linalg.norm(Qp, axis=1) > 1e-12]

    def coords(self, G: np.ndarray) -> np.ndarray:
        return self.B.T @ G.ravel()[self.lay.gidx]

    def matrix(self, x: np.ndarray) -> np.ndarray:
        d2 = self.lay.d2
        out = np.zeros(d2 * d2)
        out[self.lay.gidx] = self.B @ x
        return out.reshape(d2, d2)

    @staticmethod
    def _prepare(Yk: sp.csc_matrix, n: int):
        """Columns of one sector block.  Columns touching few rows are kept
        as (rows, small dense matrix) so W X W costs n^2 r instead of n^3."""
        cols = np.flatnonzero(np.diff(Yk.indptr))
        Yk = Yk[:, cols]
        small = []
        total_r = 0
        for j in range(cols.size):
            lo, hi = Yk.indptr[j], Yk.indptr[j + 1]
            i, c = np.divmod(Yk.indices[lo:hi], n)
            idx, inv = np.unique(np.concatenate([i, c]), return_inverse=True)
            x = np.zeros((idx.size, idx.size))
            np.add.at(x, (inv[:i.size], inv[i.size:]), Yk.data[lo:hi])
            small.append((idx, x))
            total_r += idx.size
        sparse_mode = total_r * n * n < 0.5 * cols.size * 2.0 * n ** 3
        return {"n": n, "cols": cols, "Yk": Yk.tocsr(), "small": small if sparse_mode else None}

    def cost(self) -> float:
        """Rough flop count of one Schur assembly."""
        tot = self.dim ** 3 / 3.0
        for part in self.parts:
            n = part["n"]
            if part["small"] is None:
                tot += part["cols"].size * 2.0 * n ** 3
            else:
                tot += sum(2.0 * idx.size * n * n for idx, _ in part["small"])
        return tot

    def schur(self, W: List[np.ndarray], lin_w: np.ndarray) -> np.ndarray:
        """``W`` holds one symmetric weight per sector block in full sector
        coordinates."""
        H = np.zeros((self.dim, self.dim))
        for part, w in zip(self.parts, W):
            cols, n = part["cols"], part["n"]
            if cols.size == 0:
                continue
            step = max(1, self.chunk_doubles // (n * n))
            for s0 in range(0, cols.size, step):
                s1 = min(s0 + step, cols.size)
                if part["small"] is None:
                    X = part["Yk"][:, s0:s1].toarray().T.reshape(-1, n, n)
                    Rt = (w @ X @ w).reshape(-1, n * n)
                else:
                    Rt = np.empty((s1 - s0, n * n))
                    for j in range(s0, s1):
                        idx, x = part["small"][j]
                        wr = w[:, idx]
                        Rt[j - s0] = ((wr @ x) @ wr.T).ravel()
                H[np.ix_(cols, cols[s0:s1])] += (Rt @ part["Yk"]).T
        if lin_w.size:
            A = self.lay.C0 @ self.B
            H += (A.T * lin_w) @ A
        return H

    def solve(self, H: np.ndarray, g: np.ndarray) -> np.ndarray:
        """Minimize x.H.x / 2 + g.x subject to the trace and equality
        constraints staying fixed."""
        Q = self.Qc
        X = solve_spd(H, np.column_stack([g, Q.T]))
        Hg, HQ = X[:, 0], X[:, 1:]
        lam = np.linalg.lstsq(Q @ HQ, -Q @ Hg, rcond=None)[0]
        x = -(Hg + HQ @ lam)
        return x - Q.T @ (Q @ x)


def solve_spd(H: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Solve H x = g for a symmetric positive (semi)definite H, with
    diagonal scaling and an eigenvalue fallback for near-singular H."""
    from scipy.linalg import LinAlgError, cho_factor, cho_solve

    scale = np.sqrt(np.diag(H)).clip(1e-300)
    gs = g / (scale[:, None] if g.ndim == 2 else scale)
    Hs = H / scale[:, None] / scale[None, :]
    try:
        x = cho_solve(cho_factor(Hs), gs)
    except LinAlgError:
        w, V = np.linalg.eigh(Hs)
        keep = w > 1e-14 * w[-1]
        x = V[:, keep] @ ((V[:, keep].T @ gs) / (w[keep][:, None] if g.ndim == 2 else w[keep]))
    return x / (scale[:, None] if g.ndim == 2 else scale)


# -- solver report ----------------------------------------------------------

@dataclass
class SolverReport:
    solver: str
    energy: float
    gamma: np.ndarray
    converged: bool
    reason: str
    iterations: int
    gap: float = float("nan")
    primal_infeasibility: float = float("nan")
    dual_infeasibility: float = float("nan")
    lower_bound: float = float("nan")
    wall_time: float = 0.0
    trace: List[dict] = field(default_factory=list)

    def summary(self) -> dict:
        return {"solver": self.solver, "energy": self.energy, "converged": self.converged,
                "reason": self.reason, "iterations": self.iterations, "gap": self.gap,
                "primal_infeasibility": self.primal_infeasibility,
                "dual_infeasibility": self.dual_infeasibility, "lower_bound": self.lower_bound,
                "wall_time": self.wall_time}


class SolverError(RuntimeError):
    def __init__(self, msg: str, report: Optional[SolverReport] = None):
        super().__init__(msg)
        self.report = report


def write_trace_csv(path, rows: Sequence[dict]) -> None:
    import csv

    if not rows:
        open(path, "w").close()
        return
    keys = list(rows[0].keys())
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys, extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow(r)


def problem_from_hamiltonian(H, N: int, conditions, **kw) -> SDPProblem:
    from .model import reduced_hamiltonian

    cs = conditions if isinstance(conditions, ConditionSet) else ConditionSet.parse(conditions)
    return SDPProblem(H.M, N, reduced_hamiltonian(H, N), cs, label=getattr(H, "label", ""), **kw)

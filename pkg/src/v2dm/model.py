"""Hamiltonians, the reduced two-particle Hamiltonian, problem files,
subsystem inequalities and 2DM observables.

A Hamiltonian is H = sum t_{ab} a+_a a_b + sum_{a<b, c<d} V_{ab;cd} a+_a a+_b a_d a_c
with V antisymmetrized.  Hubbard lattices number orbital 2i as site i spin
up and 2i+1 as site i spin down.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .pair_basis import basis_for, d2_of, M_of_d2


@dataclass
class Hamiltonian:
    t: np.ndarray
    V: np.ndarray
    label: str = ""

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.V = np.asarray(self.V, dtype=float)
        M = self.t.shape[0]
        if self.t.shape != (M, M):
            raise ValueError("t must be square")
        if self.V.shape != (d2_of(M), d2_of(M)):
            raise ValueError(f"V must be {d2_of(M)}x{d2_of(M)} for M={M}")
        if not np.allclose(self.t, self.t.T, atol=1e-12 * max(1.0, np.abs(self.t).max())):
            raise ValueError("t must be symmetric")
        if not np.allclose(self.V, self.V.T, atol=1e-12 * max(1.0, np.abs(self.V).max(initial=0))):
            raise ValueError("V must be symmetric")

    @property
    def M(self) -> int:
        return self.t.shape[0]


def antisymmetrize_product(v: np.ndarray) -> np.ndarray:
    """Ordered V for the operator sum_{abcd} v_{abcd} a+_a a+_b a_d a_c."""
    pb = basis_for(v.shape[0])
    W = v - v.transpose(1, 0, 2, 3)
    W = W - W.transpose(0, 1, 3, 2)
    return pb.from_full(W)


def lift_one_body(t: np.ndarray, N: int) -> np.ndarray:
    """Two-particle matrix whose pairing with a normalized 2DM gives tr(t rho)."""
    pb = basis_for(t.shape[0])
    a, b = pb.pa, pb.pb
    I = np.eye(t.shape[0])
    out = np.einsum("ac,bd->abcd", I, t) - np.einsum("ad,bc->abcd", I, t) \
        - np.einsum("bc,ad->abcd", I, t) + np.einsum("bd,ac->abcd", I, t)
    full = out.reshape(t.shape[0] ** 2, -1)
    idx = a * t.shape[0] + b
    return full[np.ix_(idx, idx)] / (N - 1)


def reduced_hamiltonian(H: Hamiltonian, N: int) -> np.ndarray:
    if N < 2:
        raise ValueError("N must be at least 2")
    return lift_one_body(H.t, N) + H.V


def hubbard_1d(L: int, t: float = 1.0, U: float = 0.0, periodic: bool = True) -> Hamiltonian:
    if L < 2:
        raise ValueError("need at least two sites")
    M = 2 * L
    T = np.zeros((M, M))
    bonds = [(i, (i + 1) % L) for i in range(L if periodic else L - 1)]
    for i, j in bonds:
        for s in (0, 1):
            T[2 * i + s, 2 * j + s] -= t
            T[2 * j + s, 2 * i + s] -= t
    V = np.zeros((d2_of(M), d2_of(M)))
    pb = basis_for(M)
    for i in range(L):
        k = pb.slot[2 * i, 2 * i + 1]
        V[k, k] = U
    return Hamiltonian(T, V, f"hubbard L={L} t={t} U={U}")


def hubbard_fragments(sizes: Sequence[int], t: Sequence[float] | float = 1.0,
                      U: float = 0.0, onsite: Sequence[float] | None = None) -> Hamiltonian:
    """Decoupled open Hubbard chains; fragment k has hopping t[k] and on-site shift onsite[k]."""
    sizes = list(sizes)
    ts = [t] * len(sizes) if np.isscalar(t) else list(t)
    eps = [0.0] * len(sizes) if onsite is None else list(onsite)
    L = sum(sizes)
    M = 2 * L
    T = np.zeros((M, M))
    start = 0
    for n, tk, ek in zip(sizes, ts, eps):
        for i in range(start, start + n):
            for s in (0, 1):
                T[2 * i + s, 2 * i + s] += ek
                if i + 1 < start + n:
                    T[2 * i + s, 2 * (i + 1) + s] -= tk
                    T[2 * (i + 1) + s, 2 * i + s] -= tk
        start += n
    V = np.zeros((d2_of(M), d2_of(M)))
    pb = basis_for(M)
    for i in range(L):
        k = pb.slot[2 * i, 2 * i + 1]
        V[k, k] = U
    return Hamiltonian(T, V, f"fragments {sizes} t={ts} U={U}")


def pairing_hamiltonian(eps: Sequence[float], g: float, x: Sequence[float]) -> Hamiltonian:
    """H = sum eps_a n_a - (g/2) sum_{ab} x_a x_b a+_a a+_abar a_bbar a_b.

    ``eps`` and ``x`` are given per orbital with partner a ^ 1; x must be
    odd under the partner swap.
    """
    eps = np.asarray(eps, dtype=float)
    x = np.asarray(x, dtype=float)
    M = len(eps)
    if M % 2:
        raise ValueError("pairing Hamiltonian needs an even number of orbitals")
    if not np.allclose(x[1::2], -x[0::2]):
        raise ValueError("amplitudes must satisfy x_abar = -x_a")
    pb = basis_for(M)
    V = np.zeros((d2_of(M), d2_of(M)))
    lev = np.arange(0, M, 2)
    slots = pb.slot[lev, lev + 1]
    xa = x[0::2]
    V[np.ix_(slots, slots)] = -2.0 * g * np.outer(xa, xa)
    return Hamiltonian(np.diag(eps), V, f"pairing g={g}")


def structureless_amplitudes(M: int) -> np.ndarray:
    x = np.full(M, 1.0 / np.sqrt(M))
    x[1::2] *= -1
    return x


# -- problem files ---------------------------------------------------------

def save_problem(path, H: Hamiltonian, N: int) -> None:
    M = H.M
    pb = basis_for(M)
    with open(path, "w") as fh:
        fh.write(f"{M} {N}\n")
        if H.label:
            fh.write(f"# {H.label}\n")
        for a in range(M):
            for b in range(M):
                if H.t[a, b] != 0.0:
                    fh.write(f"1B {a} {b} {H.t[a, b]:.17g}\n")
        nz = np.argwhere(H.V != 0.0)
        for p, q in nz:
            fh.write(f"2B {pb.pa[p]} {pb.pb[p]} {pb.pa[q]} {pb.pb[q]} {H.V[p, q]:.17g}\n")


def load_problem(path) -> Tuple[Hamiltonian, int]:
    with open(path) as fh:
        lines = fh.readlines()
    header = None
    t = V = None
    pb = None
    label = ""
    for lineno, raw in enumerate(lines, 1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            if header is not None and not label:
                label = line[1:].strip()
            continue
        parts = line.split()
        try:
            if header is None:
                if len(parts) != 2:
                    raise ValueError("header must be 'M N'")
                M, N = int(parts[0]), int(parts[1])
                if M < 2 or N < 0:
                    raise ValueError("invalid M or N")
                header = (M, N)
                t = np.zeros((M, M))
                V = np.zeros((d2_of(M), d2_of(M)))
                pb = basis_for(M)
            elif parts[0] == "1B" and len(parts) == 4:
                a, b, v = int(parts[1]), int(parts[2]), float(parts[3])
                t[a, b] = v
            elif parts[0] == "2B" and len(parts) == 6:
                a, b, c, d = (int(x) for x in parts[1:5])
                v = float(parts[5])
                if not (a < b and c < d):
                    raise ValueError("two-body lines need a<b and c<d")
                V[pb.slot[a, b], pb.slot[c, d]] = v
            else:
                raise ValueError(f"unrecognized line {line!r}")
        except (ValueError, IndexError) as exc:
            raise ValueError(f"{path}:{lineno}: {exc}") from None
    if header is None:
        raise ValueError(f"{path}: missing 'M N' header")
    return Hamiltonian(t, V, label), header[1]


# -- subsystem constraints -------------------------------------------------

@dataclass
class SubsystemSpec:
    orbitals: np.ndarray
    t_sub: np.ndarray
    V_sub: np.ndarray
    table: List[Tuple[int, float]] = field(default_factory=list)

    def __post_init__(self):
        Ns = [n for n, _ in self.table]
        if Ns and Ns != list(range(Ns[0], Ns[0] + len(Ns))):
            raise ValueError("energy table must cover a contiguous range of N")


def restrict_to_orbitals(H: Hamiltonian, orbitals: Sequence[int]) -> Tuple[np.ndarray, np.ndarray]:
    """Embed the part of H living on ``orbitals`` back into the full space."""
    M = H.M
    sel = np.zeros(M, dtype=bool)
    sel[list(orbitals)] = True
    t = np.where(np.outer(sel, sel), H.t, 0.0)
    pb = basis_for(M)
    inside = sel[pb.pa] & sel[pb.pb]
    V = np.where(np.outer(inside, inside), H.V, 0.0)
    return t, V


def envelope_chords(table: Sequence[Tuple[int, float]]) -> List[Tuple[float, float]]:
    """Lower convex hull chords (slope, intercept) of an (N, E) table."""
    pts = sorted(table)
    hull: List[Tuple[int, float]] = []
    for p in pts:
        while len(hull) >= 2:
            (x1, y1), (x2, y2) = hull[-2], hull[-1]
            if (y2 - y1) * (p[0] - x1) >= (p[1] - y1) * (x2 - x1):
                hull.pop()
            else:
                break
        hull.append(p)
    chords = []
    for (x1, y1), (x2, y2) in zip(hull, hull[1:]):
        slope = (y2 - y1) / (x2 - x1)
        chords.append((slope, y1 - slope * x1))
    return chords


def is_convex_table(table: Sequence[Tuple[int, float]], tol: float = 1e-10) -> bool:
    pts = sorted(table)
    for (x0, y0), (x1, y1), (x2, y2) in zip(pts, pts[1:], pts[2:]):
        if y1 > y0 + (y2 - y0) * (x1 - x0) / (x2 - x0) + tol:
            return False
    return True


def subsystem_inequalities(spec: SubsystemSpec, N_total: int):
    """Linear inequalities tr(G C_k) >= c_k, one per envelope chord."""
    from .constraints import LinearInequality

    if not is_convex_table(spec.table):
        raise ValueError("subsystem energy table is not convex")
    M = spec.t_sub.shape[0]
    one = np.zeros((M, M))
    one[spec.orbitals, spec.orbitals] = 1.0
    out = []
    for slope, icpt in envelope_chords(spec.table):
        C = lift_one_body(spec.t_sub - slope * one, N_total) + spec.V_sub
        out.append(LinearInequality(C, icpt, N_total))
    return out


def subsystem_spec(H: Hamiltonian, orbitals: Sequence[int],
                   N_range: Optional[Sequence[int]] = None) -> SubsystemSpec:
    """Build a subsystem spec with its exact E(N) table from the oracle."""
    from .oracle import energy_vs_N

    orbitals = np.asarray(sorted(orbitals))
    t, V = restrict_to_orbitals(H, orbitals)
    k = len(orbitals)
    Ns = list(range(0, k + 1)) if N_range is None else list(N_range)
    sub_t = t[np.ix_(orbitals, orbitals)]
    pb_full = basis_for(H.M)
    pb_sub = basis_for(k)
    rows = pb_full.slot[orbitals[pb_sub.pa], orbitals[pb_sub.pb]]
    sub_V = V[np.ix_(rows, rows)]
    table, _ = energy_vs_N(Hamiltonian(sub_t, sub_V), Ns)
    return SubsystemSpec(orbitals, t, V, table)


def subsystem_occupation(G: np.ndarray, N: int, orbitals: Sequence[int]) -> float:
    from .nrep_maps import rho_from_gamma

    rho = rho_from_gamma(G, N)
    return float(np.trace(rho[np.ix_(orbitals, orbitals)]))


# -- observables -----------------------------------------------------------

def _sites(L: int):
    return np.arange(L)


def charge_correlation(G: np.ndarray, N: int, L: int, r: int) -> float:
    """<n_j n_{j+r}> averaged over j."""
    from .nrep_maps import map_G

    M = 2 * L
    Gm = map_G(G, N).reshape(M, M, M, M)
    tot = 0.0
    for j in range(L):
        k = (j + r) % L
        for s in (0, 1):
            for s2 in (0, 1):
                a, b = 2 * j + s, 2 * k + s2
                tot += Gm[a, a, b, b]
    return tot / L


def spin_correlation(G: np.ndarray, N: int, L: int, r: int) -> float:
    """<S^z_j S^z_{j+r}> averaged over j."""
    from .nrep_maps import map_G

    M = 2 * L
    Gm = map_G(G, N).reshape(M, M, M, M)
    tot = 0.0
    for j in range(L):
        k = (j + r) % L
        for s in (0, 1):
            for s2 in (0, 1):
                a, b = 2 * j + s, 2 * k + s2
                w = 0.25 * (1 - 2 * s) * (1 - 2 * s2)
                tot += w * Gm[a, a, b, b]
    return tot / L


def momentum_distribution(G: np.ndarray, N: int, L: int) -> np.ndarray:
    """n(k) for k = 2 pi m / L, both spins summed."""
    from .nrep_maps import rho_from_gamma

    rho = rho_from_gamma(G, N)
    out = np.zeros(L)
    j = np.arange(L)
    for m in range(L):
        k = 2 * np.pi * m / L
        ph = np.exp(1j * k * (j[:, None] - j[None, :]))
        for s in (0, 1):
            out[m] += np.real(np.sum(ph * rho[np.ix_(2 * j + s, 2 * j + s)])) / L
    return out


def correlation_fourier(values: Sequence[float]) -> np.ndarray:
    """C(k) = sum_r e^{ikr} C(r) for k = 2 pi m / L."""
    c = np.asarray(values, dtype=float)
    L = len(c)
    r = np.arange(L)
    return np.array([np.real(np.sum(np.exp(1j * 2 * np.pi * m * r / L) * c)) for m in range(L)])

"""The overlap map S = sum_k L_k^T L_k and its inverse.

For the I, Q, G, T1, T2 and T2' conditions S is a generalized Q map

    Q(a,b,c)(G) = a G + b Gbb 1 - c lift(Gb)

with Gb_{ac} = sum_b G_{ab;cb}, Gbb = tr Gb and lift(X)_{ab;cd} =
d_ac X_bd - d_ad X_bc - d_bc X_ad + d_bd X_ac.  Its inverse is again such
a map.  Linear inequalities add a rank-m term which is folded in with a
Woodbury capacitance solve.  Gutzwiller blocks and equality projections have
no closed form and go through preconditioned conjugate gradients.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .model import lift_one_body
from .nrep_maps import ConditionSet, linear_map
from .pair_basis import M_of_d2, gamma_bar, project_traceless


class OverlapError(RuntimeError):
    pass


@dataclass(frozen=True)
class GQCoeffs:
    a: float
    b: float
    c: float

    def __add__(self, other: "GQCoeffs") -> "GQCoeffs":
        return GQCoeffs(self.a + other.a, self.b + other.b, self.c + other.c)


def _q_coeffs(M: int, N: int) -> GQCoeffs:
    return GQCoeffs(1.0, (4 * N * N + 2 * N - 4 * N * M + M * M - M) / (N * N * (N - 1) ** 2),
                    (2 * N - M) / (N - 1) ** 2)


def _g_coeffs(M: int, N: int) -> GQCoeffs:
    return GQCoeffs(4.0, 0.0, (2 * N - M - 2) / (N - 1) ** 2)


def _t1_coeffs(M: int, N: int) -> GQCoeffs:
    b = (M ** 3 - 6 * M * M * N - 3 * M * M + 12 * M * N * N + 12 * M * N + 2 * M
         - 18 * N * N - 6 * N ** 3) / (3 * N * N * (N - 1) ** 2)
    c = -(M * M + 2 * N * N - 4 * M * N - M + 8 * N - 4) / (2 * (N - 1) ** 2)
    return GQCoeffs(M - 4.0, b, c)


def _t2_coeffs(M: int, N: int) -> GQCoeffs:
    return GQCoeffs(5.0 * M - 8, 2.0 / (N - 1),
                    (2 * N * N + (M - 2) * (4 * N - 3) - M * M) / (2 * (N - 1) ** 2))


def _t2p_coeffs(M: int, N: int) -> GQCoeffs:
    return GQCoeffs(5.0 * M - 4, 2.0 / (N - 1),
                    (2 * N * N + (M - 2) * (4 * N - 3) - M * M - 2) / (2 * (N - 1) ** 2))


_TABLE = {"I": lambda M, N: GQCoeffs(1.0, 0.0, 0.0), "Q": _q_coeffs, "G": _g_coeffs,
          "T1": _t1_coeffs, "T2": _t2_coeffs, "T2P": _t2p_coeffs}


def coeffs_for(cs: ConditionSet, M: int, N: int) -> GQCoeffs:
    if cs.has_gutzwiller:
        raise OverlapError("Gutzwiller blocks have no generalized-Q overlap")
    out = GQCoeffs(0.0, 0.0, 0.0)
    for lab in cs:
        out = out + _TABLE[lab](M, N)
    return out


def gq_apply(k: GQCoeffs, G: np.ndarray) -> np.ndarray:
    Gb = gamma_bar(G)
    Gbb = np.trace(Gb)
    return k.a * G + k.b * Gbb * np.eye(G.shape[0]) - k.c * lift_one_body(Gb, 2)


def _denominators(k: GQCoeffs, M: int):
    kappa = k.a - k.c * (M - 2)
    lam = k.a + k.b * M * (M - 1) - 2 * k.c * (M - 1)
    return kappa, lam


def gq_invert(k: GQCoeffs, M: int) -> GQCoeffs:
    kappa, lam = _denominators(k, M)
    scale = max(1.0, abs(k.a), abs(k.b) * M * M, abs(k.c) * M)
    if abs(k.a) < 1e-14 * scale or abs(kappa) < 1e-14 * scale or abs(lam) < 1e-14 * scale:
        raise OverlapError(f"generalized Q map {k} is singular for M={M}")
    a2 = 1.0 / k.a
    b2 = (k.b * k.a + k.b * k.c * M - 2 * k.c * k.c) / (k.a * (k.c * (M - 2) - k.a) * lam)
    c2 = k.c / (k.a * (k.c * (M - 2) - k.a))
    return GQCoeffs(a2, b2, c2)


def composed_overlap(cs: ConditionSet, N: int, G: np.ndarray) -> np.ndarray:
    """sum_k L_k^T(L_k(G)) evaluated map by map."""
    M = M_of_d2(G.shape[0])
    out = np.zeros_like(G)
    for lab in cs:
        if lab == "I":
            out += G
        else:
            L = linear_map(lab, M, N)
            out += L.adjoint(L(G))
    return out


def ext_overlap_inverse(k: GQCoeffs, constraints: Sequence[np.ndarray], Q: np.ndarray) -> np.ndarray:
    """Inverse of G -> Q(a,b,c)(G) + sum_i <C_i, G> C_i on traceless matrices.

    The constraint matrices are projected on traceless space first.  The
    rank-m correction is solved through the m x m capacitance matrix.
    """
    M = M_of_d2(Q.shape[0])
    kinv = gq_invert(k, M)
    base = gq_apply(kinv, Q)
    if len(constraints) == 0:
        return base
    Cs = [project_traceless(np.asarray(C, dtype=float)) for C in constraints]
    SC = [gq_apply(kinv, C) for C in Cs]
    m = len(Cs)
    cap = np.eye(m) + np.array([[np.vdot(Cs[i], SC[j]) for j in range(m)] for i in range(m)])
    rhs = np.array([np.vdot(C, base) for C in Cs])
    try:
        w = np.linalg.solve(cap, rhs)
    except np.linalg.LinAlgError as exc:
        raise OverlapError("singular capacitance system") from exc
    return base - np.tensordot(w, np.array(SC), axes=1)


def ext_overlap_apply(k: GQCoeffs, constraints: Sequence[np.ndarray], G: np.ndarray) -> np.ndarray:
    out = gq_apply(k, G)
    for C in constraints:
        C0 = project_traceless(np.asarray(C, dtype=float))
        out = out + np.vdot(C0, G) * C0
    return out


def cg_solve(apply: Callable[[np.ndarray], np.ndarray], rhs: np.ndarray,
             precond: Optional[Callable[[np.ndarray], np.ndarray]] = None,
             x0: Optional[np.ndarray] = None, tol: float = 1e-10, maxiter: int = 500,
             inner: Callable[[np.ndarray, np.ndarray], float] = None):
    """Preconditioned conjugate gradients on matrices; returns (x, iters, rel_res)."""
    dot = inner or (lambda u, v: float(np.vdot(u, v)))
    x = np.zeros_like(rhs) if x0 is None else x0.copy()
    r = rhs - apply(x) if x0 is not None else rhs.copy()
    bnorm = np.sqrt(dot(rhs, rhs))
    if bnorm == 0.0:
        return np.zeros_like(rhs), 0, 0.0
    z = precond(r) if precond else r
    p = z.copy()
    rz = dot(r, z)
    res = np.sqrt(dot(r, r)) / bnorm
    it = 0
    while res > tol and it < maxiter:
        Ap = apply(p)
        pAp = dot(p, Ap)
        if pAp <= 0:
            break
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        res = np.sqrt(dot(r, r)) / bnorm
        it += 1
        if res <= tol:
            break
        z = precond(r) if precond else r
        rz_new = dot(r, z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x, it, res


def overlap_inverse_apply(cs: ConditionSet, N: int, constraints: Sequence[np.ndarray], Q: np.ndarray,
                          project: Optional[Callable[[np.ndarray], np.ndarray]] = None,
                          tol: float = 1e-10, maxiter: int = 500) -> np.ndarray:
    """Solve P S P (G) = P Q on traceless space (P is the traceless or a
    stricter equality projection).  Analytic when possible, otherwise CG
    preconditioned by the analytic part."""
    M = M_of_d2(Q.shape[0])
    proj = project or project_traceless
    analytic = ConditionSet(tuple(l for l in cs if l not in ("GutzRho", "GutzQ")))
    k = coeffs_for(analytic, M, N)
    rhs = proj(Q)
    if not cs.has_gutzwiller and project is None:
        return ext_overlap_inverse(k, constraints, rhs)

    def apply(G):
        out = composed_overlap(cs, N, G)
        for C in constraints:
            C0 = project_traceless(np.asarray(C, dtype=float))
            out = out + np.vdot(C0, G) * C0
        return proj(out)

    def precond(R):
        return proj(ext_overlap_inverse(k, constraints, R))

    x, it, res = cg_solve(apply, rhs, precond, tol=tol, maxiter=maxiter)
    if res > tol:
        raise OverlapError(f"overlap CG stalled at relative residual {res:.2e} after {it} iterations")
    return x

"""Sharp bounds on pair and particle-hole operators.

A two-fermion creation operator B+ = sum_ab B_ab a+_a a+_b (B skew) is,
after an orthogonal change of orbitals, a pairing operator

    B+ = (1/sqrt 2) sum_a x_a a+_a a+_abar,     x_abar = -x_a,

so B_{a abar} = x_a / sqrt 2 in the canonical basis.  The spectrum of B+ B
follows from the Richardson equations.  With one amplitude x_k per pair level
and n pairs, the fully paired eigenstates carry n - 1 rapidities y with

    V_i = 2 sum_k x_k^2 / (1 - y_i x_k^2) + 4 (1/y_i + sum_{j != i} 1/(y_i - y_j)) = 0
    lambda = 2 sum_k x_k^2 - 4 sum_i 1/y_i.

The largest eigenvalue is reached from y_i = -i/10.  Particle-hole
conjugation shows that n pairs on m levels and m - n + 1 pairs share the
largest eigenvalue, so the smaller count is always solved.  Comparing it with the
pair occupation tr(G B+B) gives the sharp-I inequality; the two-hole analogue
uses N + 2 particles.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from math import comb
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import schur
from scipy.optimize import minimize

from .constraints import LinearInequality
from .nrep_maps import linear_map
from .pair_basis import basis_for, d2_of


class RichardsonError(RuntimeError):
    pass


# -- canonical form -------------------------------------------------------

def canonical_pairing_form(B: np.ndarray, tol: float = 1e-12) -> Tuple[np.ndarray, np.ndarray]:
    """Return level amplitudes x (length M // 2, non-negative, descending)
    and an orthogonal U with B = U^T C U, where C holds the blocks
    [[0, x_k / sqrt 2], [-x_k / sqrt 2, 0]] on rows (2k, 2k + 1).
    For odd M the last row of U spans the kernel."""
    B = np.asarray(B, dtype=float)
    M = B.shape[0]
    if B.shape != (M, M) or not np.allclose(B, -B.T, atol=tol * max(1.0, np.abs(B).max())):
        raise ValueError("B must be a square skew-symmetric matrix")
    T, Z = schur(B, output="real")
    used = np.zeros(M, dtype=bool)
    pairs, singles = [], []
    scale = max(np.abs(B).max(), 1e-300)
    i = 0
    while i < M:
        if i + 1 < M and abs(T[i + 1, i]) > 1e-13 * scale:
            pairs.append((i, i + 1, 0.5 * (T[i, i + 1] - T[i + 1, i])))
            used[i] = used[i + 1] = True
            i += 2
        else:
            singles.append(i)
            i += 1
    rows, xs = [], []
    for a, b, s in pairs:
        va, vb = Z[:, a], Z[:, b]
        if s < 0:
            va, vb, s = vb, va, -s
        rows += [va, vb]
        xs.append(np.sqrt(2.0) * s)
    for k in range(0, len(singles) - 1, 2):
        rows += [Z[:, singles[k]], Z[:, singles[k + 1]]]
        xs.append(0.0)
    if len(singles) % 2:
        rows.append(Z[:, singles[-1]])
    x = np.array(xs)
    U = np.array(rows)
    order = np.argsort(-x, kind="stable")
    perm = np.concatenate([np.ravel(np.column_stack([2 * order, 2 * order + 1])),
                           np.arange(2 * len(x), M)]).astype(int)
    return x[order], U[perm]


def pairing_matrix(x: np.ndarray, U: np.ndarray) -> np.ndarray:
    """Inverse of ``canonical_pairing_form``."""
    M = U.shape[0]
    C = np.zeros((M, M))
    for k, xk in enumerate(x):
        C[2 * k, 2 * k + 1] = xk / np.sqrt(2.0)
        C[2 * k + 1, 2 * k] = -xk / np.sqrt(2.0)
    return U.T @ C @ U


# -- Richardson equations ------------------------------------------------

@dataclass
class RichardsonState:
    x: np.ndarray
    n: int
    y: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=complex))
    lam: float = 0.0
    blocked: Optional[int] = None
    dlam: Optional[np.ndarray] = None


def _inv_diff(y: np.ndarray) -> np.ndarray:
    """1 / (y_i - y_j) off the diagonal, 0 on it."""
    diff = y[:, None] - y[None, :]
    np.fill_diagonal(diff, 1.0)
    out = 1.0 / diff
    np.fill_diagonal(out, 0.0)
    return out


def _residual(y: np.ndarray, x2: np.ndarray) -> np.ndarray:
    return 2.0 * np.sum(x2[None, :] / (1.0 - y[:, None] * x2[None, :]), axis=1) \
        + 4.0 * (1.0 / y + np.sum(_inv_diff(y), axis=1))


def _jacobian(y: np.ndarray, x2: np.ndarray) -> np.ndarray:
    inv2 = _inv_diff(y) ** 2
    J = 4.0 * inv2
    diag = 2.0 * np.sum(x2[None, :] ** 2 / (1.0 - y[:, None] * x2[None, :]) ** 2, axis=1) \
        - 4.0 * (1.0 / y ** 2 + np.sum(inv2, axis=1))
    J[np.diag_indices_from(J)] = diag
    return J


def _newton(x2: np.ndarray, y0: np.ndarray, tol: float, maxiter: int) -> Optional[np.ndarray]:
    y = y0.astype(complex)
    r = _residual(y, x2)
    nr = np.linalg.norm(r)
    polish = 0
    for _ in range(maxiter):
        # a few extra steps past tol are cheap and reach round-off
        if nr <= tol:
            if polish == 3 or nr == 0.0:
                return y
            polish += 1
        try:
            step = np.linalg.solve(_jacobian(y, x2), -r)
        except np.linalg.LinAlgError:
            return None
        a = 1.0
        for _ in range(40):
            yt = y + a * step
            with np.errstate(divide="ignore", invalid="ignore"):
                rt = _residual(yt, x2)
            nt = np.linalg.norm(rt)
            if np.isfinite(nt) and nt < nr:
                break
            a *= 0.5
        else:
            return y if nr <= tol else None
        y, r, nr = yt, rt, nt
    return y if nr <= tol else None


def _solve_levels(x: np.ndarray, n: int, tol: float = 1e-10, maxiter: int = 200, seed: int = 0):
    """Largest B+B eigenvalue for n pairs on the given levels; returns (lam, y)."""
    x = np.asarray(x, dtype=float)
    x2 = x * x
    if n <= 0:
        return 0.0, np.zeros(0, dtype=complex)
    if n > x.size:
        return 0.0, np.zeros(0, dtype=complex)
    # particle-hole conjugation maps B+B on n pairs to B+B on m - n + 1 pairs
    n = min(n, x.size - n + 1)
    if n == 1:
        return float(2.0 * x2.sum()), np.zeros(0, dtype=complex)
    scale = max(x2.max(), 1e-300)
    xs2 = x2 / scale                      # lambda scales with x^2, y with 1/x^2
    y0 = -np.arange(1, n) / 10.0
    rng = np.random.default_rng(seed)
    for attempt in range(12):
        ys = _newton(xs2, y0, tol, maxiter)
        if ys is not None:
            lam = 2.0 * xs2.sum() - 4.0 * np.sum(1.0 / ys)
            return float(lam.real * scale), ys / scale
        y0 = -np.arange(1, n) / 10.0 * (1.0 + 0.3 * rng.standard_normal(n - 1)) \
            + 0.05j * rng.standard_normal(n - 1)
    raise RichardsonError(f"Newton on the Richardson equations failed for n={n}, x={x}")


def richardson_lambda_max(x: Sequence[float], n: int, tol: float = 1e-10) -> Tuple[float, np.ndarray]:
    """Largest eigenvalue of B+B on the fully paired states with n pairs.
    ``x`` holds one amplitude per pair level."""
    if n < 0:
        raise ValueError("pair count must be non-negative")
    return _solve_levels(np.abs(np.asarray(x, dtype=float)), n, tol)


def lambda_max_particles(x: Sequence[float], N: int, free_orbital: bool = False) -> RichardsonState:
    """Largest B+B eigenvalue on N particles.  Odd N leaves one particle
    unpaired; it sits on the free orbital (odd M) or blocks one level,
    whichever gives the larger eigenvalue."""
    x = np.abs(np.asarray(x, dtype=float))
    if N % 2 == 0 or free_orbital:
        n = N // 2
        lam, y = _solve_levels(x, n)
        return RichardsonState(x, n, y, lam)
    n = (N - 1) // 2
    best = None
    for k in range(x.size):
        rest = np.delete(x, k)
        lam, y = _solve_levels(rest, n)
        if best is None or lam > best.lam:
            best = RichardsonState(x, n, y, lam, blocked=k)
    if best is None:
        best = RichardsonState(x, n)
    return best


def richardson_dy_dx(state: RichardsonState) -> np.ndarray:
    """d y_i / d x_k over the active levels, shape (n - 1, levels)."""
    x = _active_levels(state)
    y = state.y
    if y.size == 0:
        return np.zeros((0, x.size))
    x2 = x * x
    J = _jacobian(y, x2)
    dV = 4.0 * x[None, :] / (1.0 - y[:, None] * x2[None, :]) ** 2
    try:
        return np.linalg.solve(J, -dV)
    except np.linalg.LinAlgError as exc:
        raise RichardsonError("singular Richardson Jacobian") from exc


def _active_levels(state: RichardsonState) -> np.ndarray:
    x = np.abs(state.x)
    return x if state.blocked is None else np.delete(x, state.blocked)


def dlambda_dx(state: RichardsonState) -> np.ndarray:
    """d lambda / d x_k for every level (zero on a blocked level)."""
    x = _active_levels(state)
    if state.n == 0:
        g = np.zeros(x.size)
    else:
        g = 4.0 * x.astype(complex)
        if state.y.size:
            g = g + 4.0 * (richardson_dy_dx(state).T @ (1.0 / state.y ** 2))
        g = g.real
    if state.blocked is not None:
        g = np.insert(g, state.blocked, 0.0)
    return g * np.sign(np.where(state.x == 0, 1.0, state.x))


# -- operator helpers --------------------------------------------------------

def _skew_from_vec(v: np.ndarray, M: int) -> np.ndarray:
    pb = basis_for(M)
    B = np.zeros((M, M))
    B[pb.pa, pb.pb] = v
    B[pb.pb, pb.pa] = -v
    return B


def pair_vector(B: np.ndarray) -> np.ndarray:
    """p with tr(G B+B) = p.G.p over ordered pairs."""
    pb = basis_for(B.shape[0])
    return 2.0 * B[pb.pa, pb.pb]


def _lambda_and_grad(B: np.ndarray, N: int):
    M = B.shape[0]
    x, U = canonical_pairing_form(B)
    st = lambda_max_particles(x, N, free_orbital=bool(M % 2))
    dl = dlambda_dx(st)
    grad = np.zeros((M, M))
    for k, g in enumerate(dl):
        if g == 0.0:
            continue
        u, ub = U[2 * k], U[2 * k + 1]
        grad += g * np.sqrt(2.0) * np.outer(u, ub)
    # gradient with respect to the upper-triangle parameters v_ab = B_ab
    pb = basis_for(M)
    return st.lam, grad[pb.pa, pb.pb] - grad[pb.pb, pb.pa]


@dataclass
class SharpResult:
    B: Optional[np.ndarray]
    value: float
    violation: Optional[float]
    lam: float
    kind: str
    N: int


def _search(occupation_matrix: np.ndarray, N_lambda: int, M: int, restarts: int, seed: int,
            gtol: float, maxiter: int, kind: str, N: int) -> SharpResult:
    """Minimize F(v) = (lambda(v) - 4 v.A.v) / (2 |v|^2)."""
    A = occupation_matrix

    def fun(v):
        nv2 = float(v @ v)
        if nv2 < 1e-300:
            return 0.0, np.zeros_like(v)
        B = _skew_from_vec(v, M)
        lam, dlam = _lambda_and_grad(B, N_lambda)
        occ = 4.0 * float(v @ A @ v)
        num = lam - occ
        F = num / (2.0 * nv2)
        g = (dlam - 8.0 * (A @ v)) / (2.0 * nv2) - 2.0 * v * num / (2.0 * nv2 ** 2)
        return F, g

    rng = np.random.default_rng(seed)
    best_F, best_v = np.inf, None
    d2 = d2_of(M)
    for _ in range(restarts):
        v0 = rng.standard_normal(d2)
        v0 /= np.linalg.norm(v0)
        res = minimize(fun, v0, jac=True, method="CG", options={"gtol": gtol, "maxiter": maxiter})
        if res.fun < best_F:
            best_F, best_v = float(res.fun), res.x / np.linalg.norm(res.x)
    B = _skew_from_vec(best_v, M)
    lam, _ = _lambda_and_grad(B, N_lambda)
    return SharpResult(B, best_F, -best_F if best_F < 0 else None, lam, kind, N)


def sharp_I_search(G: np.ndarray, N: int, restarts: int = 20, seed: int = 0,
                   gtol: float = 1e-6, maxiter: int = 2000) -> SharpResult:
    """Most violated sharp-I condition tr(G B+B) <= lambda_N(B)."""
    M = basis_for_d2(G.shape[0])
    return _search(0.5 * (G + G.T), N, M, restarts, seed, gtol, maxiter, "I", N)


def sharp_Q_search(G: np.ndarray, N: int, restarts: int = 20, seed: int = 0,
                   gtol: float = 1e-6, maxiter: int = 2000) -> SharpResult:
    """Most violated sharp-Q condition tr(Q(G) B B+) <= lambda_{N+2}(B)."""
    M = basis_for_d2(G.shape[0])
    Q = linear_map("Q", M, N)(G)
    return _search(0.5 * (Q + Q.T), N + 2, M, restarts, seed, gtol, maxiter, "Q", N)


def basis_for_d2(d2: int) -> int:
    from .pair_basis import M_of_d2

    return M_of_d2(d2)


def sharp_G_bounds(B: np.ndarray, N: int, max_subsets: int = 100_000) -> Tuple[float, float]:
    """Extremes of (sum of N eigenvalues of B)^2 for symmetric B."""
    B = np.asarray(B, dtype=float)
    if not np.allclose(B, B.T):
        raise ValueError("B must be symmetric")
    eps = np.sort(np.linalg.eigvalsh(B))
    M = eps.size
    if not 0 <= N <= M:
        raise ValueError("particle number out of range")
    e_max = max(eps[-N:].sum() ** 2 if N else 0.0, eps[:N].sum() ** 2)
    if comb(M, N) > max_subsets:
        raise ValueError(f"C({M},{N}) exceeds the subset cap {max_subsets}")
    e_min = min(sum(s) ** 2 for s in itertools.combinations(eps, N)) if N else 0.0
    return float(e_min), float(e_max)


def emit_sharp_inequality(B: np.ndarray, lam: float, N: int, kind: str = "I") -> LinearInequality:
    """tr(G C) >= -lambda with C = -B+B lifted on pairs (or its Q adjoint)."""
    B = np.asarray(B, dtype=float)
    if np.linalg.norm(B) < 1e-12:
        raise ValueError("zero operator gives a vacuous inequality")
    p = pair_vector(B)
    P = np.outer(p, p)
    if kind == "I":
        C = -P
    elif kind == "Q":
        C = -linear_map("Q", B.shape[0], N).adjoint(P)
    else:
        raise ValueError("kind must be I or Q")
    return LinearInequality(0.5 * (C + C.T), -float(lam), N)

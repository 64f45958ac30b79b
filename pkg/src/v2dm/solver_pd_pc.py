"""Primal-dual predictor-corrector path following.

Primal X >= 0 in the carrier with P L^T X = P H2, dual Z = u0 + L(g) >= 0.
The scaling matrix D satisfies D X D = Z.  A step solves

    dX + D^-1 dZ D^-1 = nu mu Z^-1 - X,    dZ = L(dg),    P L^T dX = 0

for nu = 0 (predictor) or nu = 1 (corrector), with mu = tr XZ / n.  The
distance from the central path is measured by

    Psi = n ln tr XZ - n ln n - ln det X - ln det Z.

Predictor steps go as far as Psi <= psi_max allows; corrector steps minimize
Psi along the line until Psi <= psi_center.
"""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.optimize import minimize_scalar

from .overlap import OverlapError, cg_solve, coeffs_for, ext_overlap_inverse
from .sdp import (Blocks, InfeasibleStart, Layout, Projector, ReducedBasis, SDPProblem, SolverError,
                  SolverReport, gen_eigvals, sandwich)


@dataclass
class PDPCConfig:
    eps_rel: float = 1e-7          # stop once tr XZ <= eps_rel * n
    psi_max: float = 0.5
    psi_center: float = 0.05
    max_iter: int = 300
    max_corrector: int = 30
    cg_tol: float = 1e-10
    cg_maxiter: int = 20000
    newton_solver: str = "auto"
    direct_max_flops: float = 1e11
    init_margin: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.psi_center < self.psi_max:
            raise ValueError("need 0 < psi_center < psi_max")
        if self.eps_rel <= 0:
            raise ValueError("eps_rel must be positive")
        if self.newton_solver not in ("cg", "direct", "auto"):
            raise ValueError("newton_solver must be cg, direct or auto")


# -- block matrix functions ----------------------------------------------------

def _eigfun(A: np.ndarray, f) -> np.ndarray:
    w, V = np.linalg.eigh(A)
    if w.size and w[0] <= 0:
        raise ValueError("matrix is not positive definite")
    return (V * f(w)) @ V.T


def d_matrix(X: Blocks, Z: Blocks, inverse: bool = False) -> Blocks:
    """D = X^-1/2 (X^1/2 Z X^1/2)^1/2 X^-1/2, so that D X D = Z.

    With ``inverse`` the function returns D^-1 = X^1/2 (X^1/2 Z X^1/2)^-1/2 X^1/2.
    """
    mats = []
    for x, z in zip(X.mats, Z.mats):
        xh = _eigfun(x, np.sqrt)
        m = xh @ z @ xh
        if inverse:
            mats.append(xh @ _eigfun(0.5 * (m + m.T), lambda w: w ** -0.5) @ xh)
        else:
            xih = _eigfun(x, lambda w: w ** -0.5)
            mats.append(xih @ _eigfun(0.5 * (m + m.T), np.sqrt) @ xih)
    if np.any(X.lin <= 0) or np.any(Z.lin <= 0):
        raise ValueError("matrix is not positive definite")
    r = np.sqrt(Z.lin / X.lin)
    return Blocks(mats, 1.0 / r if inverse else r)


def _logdet(A: Blocks) -> float:
    tot = 0.0
    for a in A.mats:
        sign, ld = np.linalg.slogdet(a)
        if sign <= 0:
            return -np.inf
        tot += ld
    if np.any(A.lin <= 0):
        return -np.inf
    return tot + float(np.log(A.lin).sum())


def center_gauge(X: Blocks, Z: Blocks) -> float:
    n = X.n
    g = X.inner(Z)
    if g <= 0:
        return np.inf
    ldx, ldz = _logdet(X), _logdet(Z)
    if not (np.isfinite(ldx) and np.isfinite(ldz)):
        return np.inf
    return max(n * np.log(g) - n * np.log(n) - ldx - ldz, 0.0)


class _Theta:
    """Psi along the line (X + a dX, Z + a dZ) from generalized eigenvalues."""

    def __init__(self, X, Z, dX, dZ):
        self.n = X.n
        self.lx = gen_eigvals(X, dX)
        self.lz = gen_eigvals(Z, dZ)
        self.c = (X.inner(Z), dX.inner(Z) + X.inner(dZ), dX.inner(dZ))
        self.base = _logdet(X) + _logdet(Z)
        neg = np.concatenate([self.lx[self.lx < 0], self.lz[self.lz < 0]])
        self.bound = float(np.min(-1.0 / neg)) if neg.size else np.inf

    def __call__(self, a: float) -> float:
        if a >= self.bound:
            return np.inf
        g = self.c[0] + a * self.c[1] + a * a * self.c[2]
        if g <= 0:
            return np.inf
        ld = self.base + np.log1p(a * self.lx).sum() + np.log1p(a * self.lz).sum()
        return self.n * np.log(g) - self.n * np.log(self.n) - ld


def pd_line_search(X: Blocks, Z: Blocks, dX: Blocks, dZ: Blocks, psi_max: float,
                   cap: float = 1.0, iters: int = 100) -> float:
    """Largest alpha <= cap keeping both iterates interior and Psi <= psi_max."""
    th = _Theta(X, Z, dX, dZ)
    hi = min(cap, th.bound * (1.0 - 1e-10))
    if th(hi) <= psi_max:
        return hi
    lo = 0.0
    if th(lo) > psi_max:
        return 0.0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if th(mid) <= psi_max:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-12 * max(hi, 1e-300):
            break
    return lo


def center_line_search(X, Z, dX, dZ, cap: float = 1.0) -> float:
    th = _Theta(X, Z, dX, dZ)
    hi = min(cap, th.bound * (1.0 - 1e-6))
    if hi <= 0:
        return 0.0
    res = minimize_scalar(th, bounds=(0.0, hi), method="bounded", options={"xatol": 1e-10 * hi})
    return float(res.x) if th(res.x) < th(0.0) else 0.0


# -- solver ----------------------------------------------------------------------

class PDPC:
    def __init__(self, problem: SDPProblem, cfg: Optional[PDPCConfig] = None,
                 layout: Optional[Layout] = None):
        if problem.nonlin is not None:
            raise ValueError("the primal-dual solver does not handle the nonlinear hopping bound")
        self.p = problem
        self.cfg = cfg or PDPCConfig()
        self.lay = layout or Layout(problem)
        self.P = Projector(problem.d2, problem.equalities)
        self.u0 = self.lay.forward(problem.gamma0)
        self.basis = None
        if self.cfg.newton_solver != "cg":
            basis = ReducedBasis(self.lay, self.P)
            if self.cfg.newton_solver == "direct" or basis.cost() <= self.cfg.direct_max_flops:
                self.basis = basis
        if self.basis is not None:
            ident = self.lay.lift(self.lay.identity())
            self._S = self.basis.schur(ident, np.ones(self.lay.C0.shape[0]))
        self._precond = self._analytic_precond()

    def _analytic_precond(self):
        if self.p.equalities or any(b.defl[k] is not None for b in self.lay.blocks
                                    for k in range(len(b.comps))):
            return None
        try:
            k = coeffs_for(self.p.conditions, self.p.M, self.p.N)
        except OverlapError:
            return None
        C = [q.C0 for q in self.p.inequalities]
        return lambda R: self.P(ext_overlap_inverse(k, C, R))

    # P L^T L P restricted solve: returns g with P L^T L g = P R
    def overlap_solve(self, R: np.ndarray) -> np.ndarray:
        if self.basis is not None:
            return self.basis.matrix(self.basis.solve(self._S, -self.basis.coords(R)))
        apply = lambda G: self.P(self.lay.adjoint(self.lay.forward(G)))
        x, it, res = cg_solve(apply, self.P(R), self._precond, tol=self.cfg.cg_tol,
                              maxiter=self.cfg.cg_maxiter)
        return self.P(x)

    def proj_range(self, A: Blocks) -> Blocks:
        """Orthogonal projection on {L(g) : g in the affine directions}."""
        return self.lay.forward(self.overlap_solve(self.lay.adjoint(A)))

    def proj_kernel(self, A: Blocks) -> Blocks:
        return A - self.proj_range(A)

    def init_feasible(self) -> Tuple[Blocks, Blocks]:
        lay = self.lay
        Xp = lay.forward(self.overlap_solve(self.p.H2))
        rng = np.random.default_rng(self.cfg.seed)
        R = lay.zeros()
        for a in R.mats:
            A = rng.standard_normal(a.shape)
            a += 0.5 * (A + A.T)
        R.lin += rng.standard_normal(R.lin.shape)
        Xr = Xp + self.proj_kernel(R) * (1e-3 * Xp.norm() / max(R.norm(), 1e-300))
        C = self.proj_kernel(self.u0)
        if min(np.linalg.eigvalsh(c)[0] for c in C.mats if c.size) <= 0 or np.any(C.lin <= 0):
            raise InfeasibleStart("cannot build a strictly feasible primal start")
        lam = gen_eigvals(C, Xr)
        alpha = max(0.0, -float(lam.min())) + self.cfg.init_margin * max(1.0, float(np.abs(lam).max()))
        return Xr + C * alpha, self.u0.copy()

    def pd_step(self, X: Blocks, Z: Blocks, nu: float):
        lay = self.lay
        n = X.n
        mu = X.inner(Z) / n
        Dinv = d_matrix(X, Z, inverse=True)
        Zinv = Blocks([np.linalg.inv(z) for z in Z.mats], 1.0 / Z.lin)
        Bm = Zinv * (nu * mu) - X
        rhs = lay.adjoint(Bm)
        if self.basis is not None:
            H = self.basis.schur(lay.lift(Dinv), Dinv.lin ** 2)
            dg = self.basis.matrix(self.basis.solve(H, -self.basis.coords(rhs)))
            it = 0
        else:
            apply = lambda G: self.P(lay.adjoint(sandwich(Dinv, lay.forward(G))))
            dg, it, res = cg_solve(apply, self.P(rhs), tol=self.cfg.cg_tol, maxiter=self.cfg.cg_maxiter)
            if res > 1e3 * self.cfg.cg_tol:
                raise SolverError(f"dual system CG stalled at relative residual {res:.2e}")
            dg = self.P(dg)
        dZ = lay.forward(dg)
        dX = self.proj_kernel(Bm - sandwich(Dinv, dZ))
        return dX, dZ, dg, it

    def solve(self) -> SolverReport:
        cfg, p = self.cfg, self.p
        start = time.time()
        X, Z = self.init_feasible()
        g = np.zeros_like(p.gamma0)
        n = X.n
        eps = cfg.eps_rel * n
        trace = []
        it = 0
        reason, converged = "max_iter", False

        def log(kind, alpha, cg):
            G = p.gamma0 + g
            dual = p.energy(G)
            primal = p.energy(p.gamma0) - self.u0.inner(X)
            trace.append({"t": X.inner(Z) / n, "newton_step": it, "cg_iters": cg,
                          "gap_estimate": X.inner(Z), "energy": dual, "primal_energy": primal,
                          "dual_energy": dual, "psi": center_gauge(X, Z), "step": alpha, "kind": kind})

        def center():
            nonlocal X, Z, g, it
            for _ in range(cfg.max_corrector):
                if center_gauge(X, Z) <= cfg.psi_center:
                    return True
                dX, dZ, dg, cg = self.pd_step(X, Z, 1.0)
                a = center_line_search(X, Z, dX, dZ)
                if a <= 0:
                    return False
                X, Z, g = X + dX * a, Z + dZ * a, g + dg * a
                it += 1
                log("corrector", a, cg)
            return center_gauge(X, Z) <= cfg.psi_center

        if not center():
            reason = "centering"
        else:
            while it < cfg.max_iter:
                if X.inner(Z) <= eps:
                    reason, converged = "gap", True
                    break
                dX, dZ, dg, cg = self.pd_step(X, Z, 0.0)
                a = pd_line_search(X, Z, dX, dZ, cfg.psi_max)
                if a <= 1e-12:
                    reason = "line_search"
                    break
                X, Z, g = X + dX * a, Z + dZ * a, g + dg * a
                it += 1
                log("predictor", a, cg)
                # a converged predictor needs no recentering
                if X.inner(Z) <= eps:
                    reason, converged = "gap", True
                    break
                if not center():
                    reason = "centering"
                    break
        G = p.gamma0 + g
        primal = p.energy(p.gamma0) - self.u0.inner(X)
        pinf = float(np.linalg.norm(self.P(self.lay.adjoint(X) - p.H2)))
        report = SolverReport("pd-pc", p.energy(G), G, converged, reason, it, gap=X.inner(Z),
                              primal_infeasibility=pinf, dual_infeasibility=0.0, lower_bound=primal,
                              wall_time=time.time() - start, trace=trace)
        if not converged:
            raise SolverError(f"pd-pc stopped without convergence ({reason})", report)
        return report


def init_feasible(problem: SDPProblem, solver: Optional[PDPC] = None):
    return (solver or PDPC(problem)).init_feasible()


def pd_step(X, Z, nu, problem, solver: Optional[PDPC] = None):
    dX, dZ, _, _ = (solver or PDPC(problem)).pd_step(X, Z, nu)
    return dX, dZ


def solve_pd_pc(problem: SDPProblem, cfg: Optional[PDPCConfig] = None,
                layout: Optional[Layout] = None) -> SolverReport:
    return PDPC(problem, cfg, layout).solve()

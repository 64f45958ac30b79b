"""Dual-only potential reduction.

Minimizes phi(G) = tr(G H2) - t ln det Z(G) - t ln s(G) over the affine
space of normalized 2DMs for a decreasing sequence of barrier weights t.
s(G) = tr(G T) - f*(pair trace) is the optional nonlinear hopping bound.
Each t is followed by damped Newton steps.  The Newton system is solved by
conjugate gradients or, when the number of free 2DM entries is modest, by
assembling the reduced Hessian and a Cholesky factorization.  The step
length comes from bisection on d phi / d alpha.
"""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .constraints import nonlin_f_star, nonlin_g, nonlin_h
from .overlap import cg_solve
from .sdp import (Blocks, Eig, InfeasibleStart, Layout, Projector, ReducedBasis, SDPProblem,
                  SolverError, SolverReport, gen_eigvals, sandwich)


@dataclass
class DualPRConfig:
    gap_tol: float = 1e-6          # stop once n * t falls below this
    newton_tol: float = 1e-7       # on alpha * |Delta|
    decrement_tol: float = 1e-6    # on the Newton decrement divided by n
    beta: float = 0.3
    t_init: float = 1.0
    cg_tol_max: float = 1e-3
    cg_tol_min: float = 1e-8
    cg_maxiter: int = 20000
    max_newton: int = 60
    max_outer: int = 200
    bisect_iter: int = 200
    bisect_tol: float = 1e-12
    newton_solver: str = "auto"    # "cg", "direct" or "auto"
    direct_max_flops: float = 1e11

    def __post_init__(self):
        if not 0 < self.beta < 1:
            raise ValueError("beta must lie in (0, 1)")
        for name in ("gap_tol", "newton_tol", "t_init", "cg_tol_max", "cg_tol_min"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.newton_solver not in ("cg", "direct", "auto"):
            raise ValueError("newton_solver must be cg, direct or auto")


class _Nonlin:
    """Value and derivatives of s(G) = tr(G T) - f*(x) along the affine space."""

    def __init__(self, problem: SDPProblem):
        self.hop = problem.nonlin
        self.norm = 2.0 * np.trace(problem.gamma0) / (problem.N * (problem.N - 1))

    def x(self, G):
        return self.hop.pair_trace(G)

    def s(self, G):
        return float(np.vdot(G, self.hop.T)) - nonlin_f_star(self.x(G), self.hop, self.norm)

    def grad(self, G):
        return self.hop.T - nonlin_g(self.x(G), self.hop) * self.hop.one_P

    def along(self, G, D):
        """s(alpha) and s'(alpha) on the line G + alpha D."""
        s0 = float(np.vdot(G, self.hop.T))
        sd = float(np.vdot(D, self.hop.T))
        x0, dx = self.x(G), self.x(D)

        def s(a):
            return s0 + a * sd - nonlin_f_star(max(x0 + a * dx, 0.0), self.hop, self.norm)

        def ds(a):
            return sd - nonlin_g(max(x0 + a * dx, 0.0), self.hop) * dx

        return s, ds


class DualPR:
    def __init__(self, problem: SDPProblem, cfg: Optional[DualPRConfig] = None,
                 layout: Optional[Layout] = None):
        self.p = problem
        self.cfg = cfg or DualPRConfig()
        self.lay = layout or Layout(problem)
        self.P = Projector(problem.d2, problem.equalities)
        self.nl = _Nonlin(problem) if problem.nonlin is not None else None
        self.n = self.lay.n + (1 if self.nl else 0)
        self.basis = None
        if self.cfg.newton_solver != "cg":
            basis = ReducedBasis(self.lay, self.P)
            if self.cfg.newton_solver == "direct" or basis.cost() <= self.cfg.direct_max_flops:
                self.basis = basis

    # -- pieces --------------------------------------------------------------
    def _state(self, G):
        Z = self.lay.forward(G)
        E = Eig(Z)
        if E.min() <= 0:
            raise InfeasibleStart("iterate left the interior of the cone")
        return Z, E, E.fn(lambda w: 1.0 / w)

    def potential(self, G: np.ndarray, t: float) -> float:
        _, E, _ = self._state(G)
        val = self.p.energy(G) - t * E.logdet()
        if self.nl:
            s = self.nl.s(G)
            if s <= 0:
                return np.inf
            val -= t * np.log(s)
        return val

    def gradient(self, G: np.ndarray, t: float, Zinv: Optional[Blocks] = None) -> np.ndarray:
        if Zinv is None:
            _, _, Zinv = self._state(G)
        g = self.p.H2 - t * self.lay.adjoint(Zinv)
        if self.nl:
            g = g - (t / self.nl.s(G)) * self.nl.grad(G)
        return self.P(g)

    def hessian_apply(self, G: np.ndarray, D: np.ndarray, t: float,
                      Zinv: Optional[Blocks] = None, nl_cache=None) -> np.ndarray:
        if Zinv is None:
            _, _, Zinv = self._state(G)
        out = self.lay.adjoint(sandwich(Zinv, self.lay.forward(D)))
        if self.nl:
            s, gs, h, oneP = nl_cache if nl_cache else self._nl_cache(G)
            out = out + (np.vdot(gs, D) / s ** 2) * gs + (h * np.vdot(oneP, D) / s) * oneP
        return t * self.P(out)

    def _nl_cache(self, G):
        hop = self.p.nonlin
        return (self.nl.s(G), self.nl.grad(G), nonlin_h(self.nl.x(G), hop), hop.one_P)

    def reduced_hessian(self, G: np.ndarray, t: float, E: Optional[Eig] = None) -> np.ndarray:
        """Hessian of phi in the coordinates of ``self.basis``."""
        if E is None:
            _, E, _ = self._state(G)
        H = self.basis.schur(self.lay.lift(E.fn(lambda w: 1.0 / w)), 1.0 / E.lin ** 2)
        if self.nl:
            s, gs, h, oneP = self._nl_cache(G)
            a, b = self.basis.coords(gs), self.basis.coords(oneP)
            H += np.outer(a, a) / s ** 2 + (h / s) * np.outer(b, b)
        return t * H

    def newton_direction(self, G: np.ndarray, t: float, cg_tol: float, Zinv=None, E=None):
        if Zinv is None:
            _, E, Zinv = self._state(G)
        grad = self.gradient(G, t, Zinv)
        if self.basis is not None:
            if E is None:
                E = Eig(self.lay.forward(G))
            H = self.reduced_hessian(G, t, E)
            D = self.basis.matrix(self.basis.solve(H, self.basis.coords(grad)))
            return D, grad, 0, 0.0
        cache = self._nl_cache(G) if self.nl else None
        D, it, res = cg_solve(lambda X: self.hessian_apply(G, X, t, Zinv, cache), -grad,
                              tol=cg_tol, maxiter=self.cfg.cg_maxiter)
        return self.P(D), grad, it, res

    def line_search(self, G: np.ndarray, D: np.ndarray, t: float, Z: Optional[Blocks] = None) -> float:
        cfg = self.cfg
        if Z is None:
            Z = self.lay.forward(G)
        lam = gen_eigvals(Z, self.lay.forward(D))
        neg = lam[lam < 0]
        amax = float(np.min(-1.0 / neg)) if neg.size else 1e12
        c1 = self.p.energy(D)
        if self.nl:
            s, ds = self.nl.along(G, D)
            if s(amax) <= 0 or not np.isfinite(s(amax)):
                lo, hi = 0.0, amax
                for _ in range(cfg.bisect_iter):
                    mid = 0.5 * (lo + hi)
                    if s(mid) > 0:
                        lo = mid
                    else:
                        hi = mid
                    if hi - lo <= cfg.bisect_tol * max(1.0, hi):
                        break
                amax = lo

        def dphi(a):
            v = c1 - t * np.sum(lam / (1.0 + a * lam))
            if self.nl:
                sa = s(a)
                if sa <= 0:
                    return np.inf
                v -= t * ds(a) / sa
            return v

        hi = amax * (1.0 - 1e-12) if np.isfinite(amax) else 1e12
        if dphi(0.0) >= 0:
            return 0.0
        if dphi(hi) <= 0:
            return hi
        lo = 0.0
        for _ in range(cfg.bisect_iter):
            mid = 0.5 * (lo + hi)
            if dphi(mid) < 0:
                lo = mid
            else:
                hi = mid
            if hi - lo <= cfg.bisect_tol * max(1.0, hi):
                break
        return 0.5 * (lo + hi)

    # -- driver ----------------------------------------------------------------
    def solve(self, G0: Optional[np.ndarray] = None) -> SolverReport:
        cfg, p = self.cfg, self.p
        start = time.time()
        G = (p.gamma0 if G0 is None else G0).copy()
        for q in p.equalities:
            if abs(q.residual(G)) > 1e-8 * max(1.0, abs(q.e)):
                raise InfeasibleStart("start violates an equality constraint")
        Z, E, Zinv = self._state(G)
        if self.nl and self.nl.s(G) <= 0:
            raise InfeasibleStart("start violates the nonlinear hopping bound")
        t = cfg.t_init
        trace = []
        total_newton = 0
        reason = "max_outer"
        converged = False
        for outer in range(cfg.max_outer):
            for k in range(cfg.max_newton):
                cg_tol = min(cfg.cg_tol_max, max(cfg.cg_tol_min, cfg.cg_tol_max * t))
                D, grad, it, res = self.newton_direction(G, t, cg_tol, Zinv, E)
                dec = -float(np.vdot(grad, D)) / t
                if dec < 0:
                    D = -self.P(grad)
                    dec = float(np.vdot(grad, grad)) / t
                alpha = self.line_search(G, D, t, Z)
                G = G + alpha * D
                Z, E, Zinv = self._state(G)
                total_newton += 1
                step = alpha * float(np.linalg.norm(D))
                trace.append({"t": t, "newton_step": k, "cg_iters": it,
                              "gap_estimate": self.n * t, "energy": p.energy(G),
                              "grad_norm": float(np.linalg.norm(grad)), "step": step})
                if step < cfg.newton_tol or dec < cfg.decrement_tol * self.n:
                    break
            if self.n * t < cfg.gap_tol:
                reason, converged = "gap", True
                break
            t *= cfg.beta
        report = SolverReport("dual-pr", p.energy(G), G, converged, reason, total_newton,
                              gap=self.n * t, lower_bound=p.energy(G) - self.n * t,
                              wall_time=time.time() - start, trace=trace)
        report.dual_infeasibility = 0.0
        if not converged:
            raise SolverError(f"dual-pr stopped without convergence ({reason})", report)
        return report


def solve_dual_pr(problem: SDPProblem, cfg: Optional[DualPRConfig] = None,
                  layout: Optional[Layout] = None) -> SolverReport:
    return DualPR(problem, cfg, layout).solve()


def gradient(G, t, problem, solver: Optional[DualPR] = None):
    return (solver or DualPR(problem)).gradient(G, t)


def hessian_apply(G, D, t, problem, solver: Optional[DualPR] = None):
    return (solver or DualPR(problem)).hessian_apply(G, D, t)


def newton_direction(G, t, problem, cg_tol, solver: Optional[DualPR] = None):
    return (solver or DualPR(problem)).newton_direction(G, t, cg_tol)[0]


def line_search(G, D, t, problem, solver: Optional[DualPR] = None):
    return (solver or DualPR(problem)).line_search(G, D, t)

"""Boundary point method (augmented Lagrangian with one inner pass).

Dual variable G = G0 + g with g in the affine directions, slack Z and
primal X in the carrier.  One iteration:

    S g = P[ L^T(Z - u0 + X / sigma) - H2 / sigma ]
    W   = u0 + L(g) - X / sigma
    Z   = W_+ ,  X = -sigma W_-

so X Z = 0 and both stay PSD.  S is the overlap map restricted to the affine
directions.  sigma balances primal and dual infeasibility.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .overlap import overlap_inverse_apply
from .sdp import Blocks, Layout, Projector, SDPProblem, SolverError, SolverReport


@dataclass
class BPConfig:
    tol: float = 1e-6
    sigma0: float = 1.0
    tau: float = 1.5
    max_iter: int = 20000
    stagnation: int = 500
    sigma_every: int = 50
    log_every: int = 10

    def __post_init__(self):
        if self.tau <= 1:
            raise ValueError("tau must exceed 1")
        if self.sigma0 <= 0 or self.tol <= 0:
            raise ValueError("sigma0 and tol must be positive")


def sigma_update(sigma: float, primal: float, dual: float, tau: float) -> float:
    if tau <= 1:
        raise ValueError("tau must exceed 1")
    hi, lo = max(primal, dual), min(primal, dual)
    if hi <= 1.1 * lo:
        return sigma
    return sigma * tau if dual > primal else sigma / tau


def split_psd(W: Blocks):
    """Positive and negative parts of every block."""
    pos, neg = [], []
    for A in W.mats:
        w, V = np.linalg.eigh(A)
        p = np.clip(w, 0, None)
        pos.append((V * p) @ V.T)
        neg.append((V * (w - p)) @ V.T)
    lp = np.clip(W.lin, 0, None)
    return Blocks(pos, lp), Blocks(neg, W.lin - lp)


class BoundaryPoint:
    def __init__(self, problem: SDPProblem, cfg: Optional[BPConfig] = None,
                 layout: Optional[Layout] = None):
        if problem.nonlin is not None:
            raise ValueError("the boundary point solver does not handle the nonlinear hopping bound")
        self.p = problem
        self.cfg = cfg or BPConfig()
        # no interior is needed here, so known null directions stay in the carrier
        # and the layout overlap coincides with the analytic one
        self.lay = layout or Layout(replace(problem, deflate={}))
        self.P = Projector(problem.d2, problem.equalities)
        self.C = [q.C0 for q in problem.inequalities]
        self.u0 = self.lay.forward(problem.gamma0)
        # work with a unit-norm Hamiltonian so sigma = 1 is a sensible scale
        self.h_scale = max(float(np.linalg.norm(self.P(problem.H2))), 1e-300)
        self.H2 = problem.H2 / self.h_scale

    def solve_overlap(self, R: np.ndarray) -> np.ndarray:
        proj = self.P if self.p.equalities else None
        return overlap_inverse_apply(self.p.conditions, self.p.N, self.C, R, project=proj)

    def inner_step(self, g, Z, X, sigma):
        rhs = self.lay.adjoint(Z - self.u0 + X * (1.0 / sigma)) - self.H2 / sigma
        g = self.solve_overlap(self.P(rhs))
        Lg = self.lay.forward(g)
        W = self.u0 + Lg - X * (1.0 / sigma)
        Wp, Wm = split_psd(W)
        return g, Lg, Wp, Wm * (-sigma)

    def solve(self) -> SolverReport:
        cfg, p, lay = self.cfg, self.p, self.lay
        start = time.time()
        G0 = p.gamma0
        g = np.zeros_like(G0)
        Z = self.u0.copy()
        X = lay.zeros()
        sigma = cfg.sigma0
        scale_u = max(1.0, self.u0.norm())
        trace = []
        best = np.inf
        since = 0
        reason, converged = "max_iter", False
        pinf = dinf = np.inf
        it = 0
        for it in range(1, cfg.max_iter + 1):
            g, Lg, Z, X = self.inner_step(g, Z, X, sigma)
            pinf = float(np.linalg.norm(self.P(lay.adjoint(X) - self.H2)))
            dinf = (Z - self.u0 - Lg).norm() / scale_u
            energy = p.energy(G0 + g)
            if it % cfg.log_every == 0 or it == 1:
                trace.append({"iter": it, "sigma": sigma, "primal_infeas": pinf,
                              "dual_infeas": dinf, "energy": energy})
            if max(pinf, dinf) < cfg.tol:
                reason, converged = "converged", True
                break
            cur = max(pinf, dinf)
            if cur < 0.999 * best:
                best, since = cur, 0
            else:
                since += 1
                if since >= cfg.stagnation:
                    reason = "stagnation"
                    break
            if it % cfg.sigma_every == 0:
                sigma = sigma_update(sigma, pinf, dinf, cfg.tau)
        G = G0 + g
        primal_obj = p.energy(G0) - self.h_scale * self.u0.inner(X)
        report = SolverReport("bp", p.energy(G), G, converged, reason, it,
                              gap=abs(p.energy(G) - primal_obj), primal_infeasibility=pinf,
                              dual_infeasibility=dinf, lower_bound=primal_obj,
                              wall_time=time.time() - start, trace=trace)
        if not converged:
            raise SolverError(f"boundary point stopped without convergence ({reason})", report)
        return report


def bp_inner_step(state, sigma, problem, solver: Optional[BoundaryPoint] = None):
    s = solver or BoundaryPoint(problem)
    g, Z, X = state
    g, _, Z, X = s.inner_step(g, Z, X, sigma)
    return g, Z, X


def solve_boundary_point(problem: SDPProblem, cfg: Optional[BPConfig] = None,
                         layout: Optional[Layout] = None) -> SolverReport:
    return BoundaryPoint(problem, cfg, layout).solve()

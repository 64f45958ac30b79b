"""End-to-end acceptance criteria on the one-dimensional Hubbard chain.

Each test checks one criterion and records a PASS/FAIL line that is
printed in the terminal summary.  Expensive solves are cached so that a
single SDP run can serve several criteria.
"""
import time
from dataclasses import replace

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES, hubbard_exact, min_eig
from v2dm.constraints import (hubbard_nonlin_hopping, nonlin_f_star, nonlin_g, nonlin_h,
                              spin_squared_equality)
from v2dm.model import (hubbard_1d, hubbard_fragments, lift_one_body, reduced_hamiltonian,
                        subsystem_inequalities, subsystem_occupation, subsystem_spec)
from v2dm.nrep_maps import ConditionSet, linear_map, rho_from_gamma
from v2dm.oracle import energy_vs_N, exact_2dm, exact_ground, pair_op_max_eig, spin_squared_matrix
from v2dm.overlap import (coeffs_for, composed_overlap, ext_overlap_apply, ext_overlap_inverse,
                          gq_apply, gq_invert)
from v2dm.pair_basis import d2_of, project_traceless
from v2dm.sdp import Projector, SolverError, problem_from_hamiltonian
from v2dm.sharp import (canonical_pairing_form, dlambda_dx, lambda_max_particles,
                        richardson_lambda_max)
from v2dm.solver_bp import solve_boundary_point
from v2dm.solver_dual_pr import solve_dual_pr
from v2dm.solver_pd_pc import solve_pd_pc

pytestmark = pytest.mark.acceptance

SOLVERS = {"dual-pr": solve_dual_pr, "pd-pc": solve_pd_pc, "bp": solve_boundary_point}
IQG, IQGT, GUTZ = "I,Q,G", "I,Q,G,T1,T2", "I,Q,G,GUTZ"

_CACHE = {}


def solve(L, N, U, cs, solver, nonlin=False):
    """(energy, seconds) of a cached Hubbard chain solve."""
    key = (L, N, U, cs, solver, nonlin)
    if key not in _CACHE:
        H = hubbard_1d(L, 1.0, U)
        kw = {"nonlin": hubbard_nonlin_hopping(H, L, N)} if nonlin else {}
        p = problem_from_hamiltonian(H, N, cs, **kw)
        t0 = time.perf_counter()
        try:
            r = SOLVERS[solver](p)
            energy = r.energy
        except SolverError as exc:
            energy = exc.report.energy if exc.report is not None else float("nan")
        _CACHE[key] = (energy, time.perf_counter() - t0)
    return _CACHE[key]


def exact(L, N, U):
    return hubbard_exact(L, N, U)[0]


def record(number, ok, detail, seconds, limit):
    within = seconds <= limit
    status = "PASS" if ok and within else "FAIL"
    line = f"[{status}] criterion {number}: {detail} ({seconds:.1f} s, limit {limit:.0f} s)"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line
    assert within, line


# -- 1: strong coupling table ---------------------------------------------------

TABLE = {
    50.0: {"IQG": -3.55, "IQGT": -2.29, "nonlin": -3.06, "exact": -2.20},
    100.0: {"IQG": -3.49, "IQGT": -2.15, "nonlin": -2.51, "exact": -2.08},
    1000.0: {"IQG": -3.44, "IQGT": -2.03, "nonlin": -2.05, "exact": -2.01},
}


def test_criterion_1_strong_coupling_table():
    misses, seconds = [], 0.0
    for U, ref in TABLE.items():
        got = {}
        for name, cs, solver, nl in [("IQG", IQG, "bp", False), ("IQGT", IQGT, "pd-pc", False),
                                     ("nonlin", IQG, "dual-pr", True)]:
            got[name], dt = solve(6, 5, U, cs, solver, nl)
            seconds += dt
        got["exact"] = exact(6, 5, U)
        for name, target in ref.items():
            tol = 0.03 if name == "nonlin" else 0.02
            if not abs(got[name] - target) <= tol:
                misses.append(f"U={U:g} {name} {got[name]:.4f} vs {target}")
    record(1, not misses, "twelve table entries" + (": " + "; ".join(misses) if misses else ""),
           seconds, 600)


# -- 2: free fermions ---------------------------------------------------------------

def test_criterion_2_free_fermion_exactness():
    E, dt = solve(6, 5, 0.0, IQG, "dual-pr")
    record(2, abs(E + 7.0) <= 1e-3, f"U=0 IQG energy {E:.6f} vs -7", dt, 30)


# -- 3: lower bounds and condition monotonicity ----------------------------------------

def test_criterion_3_lower_bounds_and_monotonicity():
    seconds = 0.0
    chains = {}
    for U in (8.0, 50.0):
        row = []
        for cs, solver in [(IQG, "dual-pr"), (GUTZ, "dual-pr"), (IQGT, "pd-pc")]:
            E, dt = solve(6, 5, U, cs, solver)
            seconds += dt
            row.append(E)
        row.append(exact(6, 5, U))
        chains[U] = row
    mono = all(a <= b + 1e-6 for row in chains.values() for a, b in zip(row, row[1:]))
    # every cached run so far respects the variational lower bound
    bad = [k for k, (E, _) in _CACHE.items() if not E <= exact(*k[:3]) + 1e-6]
    detail = "; ".join(f"U={U:g} " + " <= ".join(f"{e:.4f}" for e in row)
                       for U, row in chains.items())
    record(3, mono and not bad,
           f"{len(_CACHE)} runs below exact, chain {detail}" + (f", violations {bad}" if bad else ""),
           seconds, 900)


# -- 4: solver agreement ------------------------------------------------------------

def test_criterion_4_solver_agreement():
    seconds, spreads = 0.0, {}
    for U in (1.0, 4.0, 8.0):
        es = []
        for solver in SOLVERS:
            E, dt = solve(6, 5, U, IQG, solver)
            es.append(E)
            seconds += dt
        spreads[U] = max(es) - min(es)
    worst = max(spreads.values())
    record(4, worst <= 1e-4, f"max solver spread {worst:.2e} over U in 1,4,8", seconds, 300)


# -- 5: algebraic identities ---------------------------------------------------------

def _sym(r, n):
    A = r.standard_normal((n, n))
    return A + A.T


def test_criterion_5_algebraic_identities():
    t0 = time.perf_counter()
    r = np.random.default_rng(5)
    shapes = [(6, 3), (8, 3), (8, 5)]
    worst = {}

    def note(name, err):
        worst[name] = max(worst.get(name, 0.0), err)

    for trial in range(100):
        M, N = shapes[trial % 3]
        d2 = d2_of(M)
        for lab in ("G", "T1", "T2", "T2P", "GutzRho", "GutzQ"):
            Lm = linear_map(lab, M, N)
            G, A = _sym(r, d2), _sym(r, Lm.dim)
            err = abs(np.vdot(Lm(G), A) - np.vdot(G, Lm.adjoint(A)))
            note("adjoint", err / (np.linalg.norm(G) * np.linalg.norm(A)))
        cs = ConditionSet.parse(["I,Q,G", "I,Q,G,T1,T2", "I,Q,G,T1,T2P"][trial % 3])
        k = coeffs_for(cs, M, N)
        G = project_traceless(_sym(r, d2))
        ref = composed_overlap(cs, N, G)
        note("overlap", np.linalg.norm(gq_apply(k, G) - ref) / np.linalg.norm(ref))
        X = _sym(r, d2)
        back = gq_apply(gq_invert(k, M), gq_apply(k, X))
        note("gq_inverse", np.linalg.norm(back - X) / np.linalg.norm(X))
        Cs = [_sym(r, d2) for _ in range(1 + trial % 4)]
        Q = project_traceless(_sym(r, d2))
        note("ext_inverse",
             np.linalg.norm(ext_overlap_apply(k, Cs, ext_overlap_inverse(k, Cs, Q)) - Q)
             / np.linalg.norm(Q))
        P = Projector(d2, [spin_squared_equality(N, M, 0.5)])
        Y = _sym(r, d2)
        note("projectors", max(np.linalg.norm(project_traceless(project_traceless(Y))
                                              - project_traceless(Y)),
                               np.linalg.norm(P(P(Y)) - P(Y))) / np.linalg.norm(Y))
    ok = all(v <= 1e-10 for v in worst.values())
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    record(5, ok, f"100 trials, worst relative errors: {detail}", time.perf_counter() - t0, 120)


# -- 6: exact states are representable -------------------------------------------------

def test_criterion_6_oracle_representability():
    t0 = time.perf_counter()
    failures = []
    labels = ("Q", "G", "T1", "T2", "T2P", "GutzRho", "GutzQ")
    count = 0
    for L in (4, 6):
        M = 2 * L
        for N in range(3, L + 1):
            S2 = spin_squared_matrix(M, N).toarray()
            for U in (0.0, 4.0, 100.0):
                H = hubbard_1d(L, 1.0, U)
                E, psi = exact_ground(H, N)
                G = exact_2dm(psi, M, N)
                rho = rho_from_gamma(G, N)
                tag = f"L={L} N={N} U={U:g}"
                count += 1
                low = min(min_eig(G), *(min_eig(linear_map(lab, M, N)(G)) for lab in labels))
                if low < -1e-9:
                    failures.append(f"{tag} eigmin {low:.1e}")
                w = np.linalg.eigvalsh(rho)
                if w[0] < -1e-9 or w[-1] > 1 + 1e-9:
                    failures.append(f"{tag} Pauli")
                s2 = psi @ S2 @ psi
                S = 0.5 * (np.sqrt(1 + 4 * s2) - 1)
                if abs(psi @ S2 @ S2 @ psi - s2 * s2) < 1e-8:
                    # a spin eigenstate satisfies the matching equality
                    res = spin_squared_equality(N, M, round(2 * S) / 2).residual(G)
                    if abs(res) > 1e-9:
                        failures.append(f"{tag} spin residual {res:.1e}")
                if abs(np.vdot(G, reduced_hamiltonian(H, N)) - E) > 1e-9:
                    failures.append(f"{tag} energy identity")
    record(6, not failures, f"{count} exact states" + (": " + "; ".join(failures) if failures else ""),
           time.perf_counter() - t0, 300)


# -- 7: Richardson equations ---------------------------------------------------------

def test_criterion_7_richardson_suite():
    t0 = time.perf_counter()
    r = np.random.default_rng(7)
    brute = 0.0
    for _ in range(50):
        M = int(r.integers(4, 13))
        n = int(r.integers(1, min(3, M // 2) + 1))
        A = r.standard_normal((M, M))
        B = A - A.T
        x, _ = canonical_pairing_form(B)
        st = lambda_max_particles(x, 2 * n, free_orbital=bool(M % 2))
        brute = max(brute, abs(st.lam - pair_op_max_eig(B, 2 * n)))
    sasaki = max(abs(richardson_lambda_max(np.full(M // 2, 1 / np.sqrt(M)), n)[0]
                     - n * (1 - 2 * (n - 1) / M))
                 for M in (6, 8, 10, 12) for n in range(1, M // 2 + 1))
    deriv = 0.0
    for N in (4, 6):
        x = r.uniform(0.2, 1.0, 5)
        g = dlambda_dx(lambda_max_particles(x, N))
        h = 1e-6
        fd = np.array([(lambda_max_particles(x + h * e, N).lam
                        - lambda_max_particles(x - h * e, N).lam) / (2 * h) for e in np.eye(5)])
        deriv = max(deriv, np.abs(g - fd).max() / np.abs(g).max())
    ok = brute <= 1e-8 and sasaki <= 1e-10 and deriv <= 1e-5
    record(7, ok, f"brute force {brute:.1e}, structureless bound {sasaki:.1e}, "
                  f"derivative {deriv:.1e}", time.perf_counter() - t0, 180)


# -- 8: nonlinear hopping bound ---------------------------------------------------------

def test_criterion_8_nonlinear_constraint():
    t0 = time.perf_counter()
    hop = hubbard_nonlin_hopping(hubbard_1d(6, 1.0, 0.0), 6, 5)
    fd_err = 0.0
    for x in np.linspace(0.005, hop.threshold - 0.005, 12):
        # f* grows like sqrt(x), so the step must shrink with x
        h = 1e-4 * x
        g_fd = (nonlin_f_star(x + h, hop) - nonlin_f_star(x - h, hop)) / (2 * h)
        h_fd = (nonlin_g(x + h, hop) - nonlin_g(x - h, hop)) / (2 * h)
        fd_err = max(fd_err, abs(nonlin_g(x, hop) - g_fd) / abs(g_fd),
                     abs(nonlin_h(x, hop) - h_fd) / abs(h_fd))
    E, dt = solve(6, 5, 1000.0, IQG, "dual-pr", nonlin=True)
    ok = fd_err <= 1e-6 and abs(E - (-2.01)) <= 0.05
    record(8, ok, f"derivative error {fd_err:.1e}, U=1000 non-linear IQG {E:.4f} vs -2.01",
           time.perf_counter() - t0 + dt, 120)


# -- 9: subsystem constraints on decoupled fragments --------------------------------------

def test_criterion_9_subsystem_fix():
    t0 = time.perf_counter()
    H = hubbard_fragments([3, 3], 1.0, 8.0)
    N = 5
    frag_a, frag_b = list(range(6)), list(range(6, 12))
    table, _ = energy_vs_N(hubbard_fragments([3], 1.0, 8.0), range(0, 7))
    E3 = dict(table)
    split = min(E3[n] + E3[N - n] for n in range(N + 1))
    # identical fragments make every integer split degenerate; a tiny
    # potential on fragment A selects one of them
    one = np.zeros((12, 12))
    one[frag_a, frag_a] = 1.0
    bias = 1e-3 * lift_one_body(one, N)
    out = {}
    for use in (False, True):
        ineqs = []
        if use:
            for orbs in (frag_a, frag_b):
                ineqs += subsystem_inequalities(subsystem_spec(H, orbs), N)
        p = problem_from_hamiltonian(H, N, IQG, inequalities=ineqs)
        res = solve_dual_pr(replace(p, H2=p.H2 + bias))
        occ = subsystem_occupation(res.gamma, N, frag_a)
        out[use] = (p.energy(res.gamma), occ, abs(occ - round(occ)))
    (E0, occ0, off0), (E1, occ1, off1) = out[False], out[True]
    ok = off0 > 0.1 and E0 < split and off1 <= 0.05 and E1 >= split - 1e-3
    record(9, ok, f"plain IQG occupation {occ0:.3f} energy {E0:.4f}; with subsystem bounds "
                  f"occupation {occ1:.4f} energy {E1:.4f}; integer split {split:.4f}",
           time.perf_counter() - t0, 180)

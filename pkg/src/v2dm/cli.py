"""Command line front-end: build a problem, run a solver, write reports.

Two subcommands:

    v2dm run   [options]          one problem, JSON report
    v2dm sweep [options] --u-list 0,1,4 | --n-list 3,4,5

Options may also come from a flat ``key = value`` file given with
``--config``; keys mirror the long flag names and command line flags win.
Exit codes: 0 converged, 2 solver failure, 3 configuration error.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from dataclasses import asdict, dataclass, field, fields, replace
from typing import List, Optional, Sequence

import numpy as np

from . import __version__
from .constraints import hubbard_nonlin_hopping, spin_squared_equality
from .model import (Hamiltonian, charge_correlation, correlation_fourier, hubbard_1d,
                    load_problem, momentum_distribution, pairing_hamiltonian, spin_correlation,
                    structureless_amplitudes, subsystem_inequalities, subsystem_occupation,
                    subsystem_spec)
from .nrep_maps import ConditionSet
from .sdp import InfeasibleStart, SolverError, SolverReport, problem_from_hamiltonian, write_trace_csv

SCHEMA = 1
EXIT_OK, EXIT_SOLVER, EXIT_CONFIG = 0, 2, 3
MODELS = ("hubbard", "file", "pairing")
SOLVERS = ("dual-pr", "pd-pc", "bp")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    model: str = "hubbard"
    sites: int = 6
    particles: Optional[int] = None
    t: float = 1.0
    u: float = 0.0
    file: Optional[str] = None
    conditions: str = "I,Q,G"
    solver: str = "dual-pr"
    spin: Optional[float] = None
    nonlin_hopping: bool = False
    subsystem: Optional[str] = None
    sharp_rounds: int = 0
    tol: Optional[float] = None
    max_iter: Optional[int] = None
    seed: int = 0
    out: Optional[str] = None
    trace: Optional[str] = None
    gamma_out: Optional[str] = None
    observables: Optional[str] = None
    oracle: bool = False
    no_timings: bool = False
    # sweep only
    u_list: Optional[str] = None
    n_list: Optional[str] = None
    table: Optional[str] = None

    def validate(self) -> "RunConfig":
        if self.model not in MODELS:
            raise ConfigError(f"model must be one of {', '.join(MODELS)}")
        if self.solver not in SOLVERS:
            raise ConfigError(f"solver must be one of {', '.join(SOLVERS)}")
        if self.model == "file" and not self.file:
            raise ConfigError("model=file needs --file")
        if self.model != "file" and self.sites < 2:
            raise ConfigError("need at least two sites")
        try:
            ConditionSet.parse(self.conditions)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.nonlin_hopping:
            if self.model != "hubbard":
                raise ConfigError("the nonlinear hopping bound needs the Hubbard model")
            if self.solver != "dual-pr":
                raise ConfigError("the nonlinear hopping bound is only handled by dual-pr")
        if self.observables and self.model != "hubbard":
            raise ConfigError("observables are defined for the Hubbard model")
        if self.sharp_rounds < 0:
            raise ConfigError("sharp-rounds must be non-negative")
        if self.tol is not None and self.tol <= 0:
            raise ConfigError("tol must be positive")
        if self.max_iter is not None and self.max_iter < 1:
            raise ConfigError("max-iter must be positive")
        if self.spin is not None and self.spin < 0:
            raise ConfigError("spin must be non-negative")
        return self


# -- configuration parsing ---------------------------------------------------

_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(key: str, value):
    typ = str(_FIELD_TYPES[key])
    if value is None or (isinstance(value, str) and value.lower() in ("", "none")):
        return None
    if "bool" in typ:
        if isinstance(value, bool):
            return value
        low = str(value).lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {value!r}")
    try:
        if "int" in typ:
            return int(value)
        if "float" in typ:
            return float(value)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {value!r}") from None
    return str(value)


def read_config_file(path: str) -> dict:
    """Flat ``key = value`` lines; '#' starts a comment."""
    out = {}
    try:
        fh = open(path)
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from None
    with fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            key = key.replace("-", "_")
            if key not in _FIELD_TYPES:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            out[key] = _coerce(key, value)
    return out


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="v2dm", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"v2dm {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("run", "sweep"):
        p = sub.add_parser(name, help=f"{name} one problem" if name == "run"
                           else "repeat a run over a U or N grid")
        p.add_argument("--config")
        p.add_argument("--model", choices=MODELS)
        p.add_argument("--sites", type=int, help="Hubbard sites or pairing levels")
        p.add_argument("--particles", type=int)
        p.add_argument("--t", type=float, help="hopping, or level spacing for pairing")
        p.add_argument("--u", type=float, help="on-site repulsion, or coupling g for pairing")
        p.add_argument("--file", help="problem file for --model file")
        p.add_argument("--conditions", help="comma list of I,Q,G,T1,T2,T2P,GUTZ")
        p.add_argument("--solver", choices=SOLVERS)
        p.add_argument("--spin", type=float)
        p.add_argument("--nonlin-hopping", action="store_const", const=True, default=None)
        p.add_argument("--subsystem", help="file with one orbital list per line")
        p.add_argument("--sharp-rounds", type=int)
        p.add_argument("--tol", type=float)
        p.add_argument("--max-iter", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--out")
        p.add_argument("--trace")
        p.add_argument("--gamma-out")
        p.add_argument("--observables")
        p.add_argument("--oracle", action="store_const", const=True, default=None)
        p.add_argument("--no-timings", action="store_const", const=True, default=None)
        if name == "sweep":
            p.add_argument("--u-list")
            p.add_argument("--n-list")
            p.add_argument("--table", help="CSV output of the sweep rows")
    return ap


def config_from_args(ns: argparse.Namespace) -> RunConfig:
    values = read_config_file(ns.config) if ns.config else {}
    for key in _FIELD_TYPES:
        v = getattr(ns, key, None)
        if v is not None:
            values[key] = v
    return RunConfig(**values).validate()


# -- problem assembly --------------------------------------------------------

def build_hamiltonian(cfg: RunConfig):
    """Hamiltonian, particle number and a model description."""
    if cfg.model == "hubbard":
        H = hubbard_1d(cfg.sites, cfg.t, cfg.u)
        N = cfg.particles if cfg.particles is not None else cfg.sites - 1
        desc = {"type": "hubbard", "sites": cfg.sites, "t": cfg.t, "U": cfg.u}
    elif cfg.model == "pairing":
        M = 2 * cfg.sites
        eps = np.repeat(cfg.t * np.arange(cfg.sites, dtype=float), 2)
        H = pairing_hamiltonian(eps, cfg.u, structureless_amplitudes(M))
        N = cfg.particles if cfg.particles is not None else cfg.sites
        desc = {"type": "pairing", "levels": cfg.sites, "spacing": cfg.t, "g": cfg.u}
    else:
        try:
            H, N = load_problem(cfg.file)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot load problem: {exc}") from None
        if cfg.particles is not None:
            N = cfg.particles
        desc = {"type": "file", "path": cfg.file, "label": H.label}
    desc["orbitals"] = H.M
    desc["particles"] = N
    if not 2 <= N <= H.M:
        raise ConfigError(f"particle number {N} out of range for {H.M} orbitals")
    return H, N, desc


def read_subsystems(path: str, M: int) -> List[List[int]]:
    subs = []
    try:
        fh = open(path)
    except OSError as exc:
        raise ConfigError(f"cannot read subsystem file: {exc}") from None
    with fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].replace(",", " ").strip()
            if not line:
                continue
            try:
                orbs = sorted({int(s) for s in line.split()})
            except ValueError:
                raise ConfigError(f"{path}:{lineno}: orbital indices must be integers") from None
            if not orbs or orbs[0] < 0 or orbs[-1] >= M:
                raise ConfigError(f"{path}:{lineno}: orbital index out of range")
            subs.append(orbs)
    return subs


def build_problem(cfg: RunConfig, H: Hamiltonian, N: int, inequalities=()):
    kw = {}
    ineqs = list(inequalities)
    if cfg.subsystem:
        for orbs in read_subsystems(cfg.subsystem, H.M):
            ineqs += subsystem_inequalities(subsystem_spec(H, orbs), N)
    if ineqs:
        kw["inequalities"] = ineqs
    if cfg.spin is not None:
        from .oracle import spin_mixed_2dm

        try:
            kw["equalities"] = [spin_squared_equality(N, H.M, cfg.spin)]
            kw["start"] = spin_mixed_2dm(H.M, N, cfg.spin)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    if cfg.nonlin_hopping:
        kw["nonlin"] = hubbard_nonlin_hopping(H, cfg.sites, N, cfg.t)
    try:
        return problem_from_hamiltonian(H, N, cfg.conditions, **kw)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def run_solver(cfg: RunConfig, problem) -> SolverReport:
    if cfg.solver == "dual-pr":
        from .solver_dual_pr import DualPRConfig, solve_dual_pr

        opts = {}
        if cfg.tol is not None:
            opts["gap_tol"] = cfg.tol
        if cfg.max_iter is not None:
            opts["max_outer"] = cfg.max_iter
        return solve_dual_pr(problem, DualPRConfig(**opts))
    if cfg.solver == "pd-pc":
        from .solver_pd_pc import PDPCConfig, solve_pd_pc

        opts = {"seed": cfg.seed}
        if cfg.tol is not None:
            opts["eps_rel"] = cfg.tol
        if cfg.max_iter is not None:
            opts["max_iter"] = cfg.max_iter
        return solve_pd_pc(problem, PDPCConfig(**opts))
    from .solver_bp import BPConfig, solve_boundary_point

    opts = {}
    if cfg.tol is not None:
        opts["tol"] = cfg.tol
    if cfg.max_iter is not None:
        opts["max_iter"] = cfg.max_iter
    try:
        return solve_boundary_point(problem, BPConfig(**opts))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def filled_report(H: Hamiltonian, N: int) -> SolverReport:
    """N = M leaves a single state: every pair is occupied."""
    from .model import reduced_hamiltonian

    K = reduced_hamiltonian(H, N)
    G = np.eye(K.shape[0])
    E = float(np.vdot(G, K))
    return SolverReport("filled", E, G, True, "filled", 0, gap=0.0, primal_infeasibility=0.0,
                        dual_infeasibility=0.0, lower_bound=E)


# -- reporting -----------------------------------------------------------------

def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if np.isfinite(x) else None
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def observables_rows(G: np.ndarray, N: int, L: int) -> List[dict]:
    nk = momentum_distribution(G, N, L)
    Ck = correlation_fourier([charge_correlation(G, N, L, r) for r in range(L)])
    Sk = correlation_fourier([spin_correlation(G, N, L, r) for r in range(L)])
    return [{"k": 2 * np.pi * m / L, "n_k": nk[m], "C_k": Ck[m], "S_k": Sk[m]} for m in range(L)]


def _write_csv(path: str, rows: Sequence[dict]) -> None:
    with open(path, "w", newline="") as fh:
        if not rows:
            return
        w = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        w.writeheader()
        for r in rows:
            w.writerow(_jsonable(r))


def _sharp_round(problem, G, N, seed):
    from .sharp import emit_sharp_inequality, sharp_I_search, sharp_Q_search

    found, new = [], []
    for search in (sharp_I_search, sharp_Q_search):
        res = search(G, N, seed=seed)
        found.append({"kind": res.kind, "F": res.value, "lambda": res.lam})
        if res.violation is not None and res.violation > 1e-8:
            new.append(emit_sharp_inequality(res.B, res.lam, N, res.kind))
    return found, new


def one_hole_report(H: Hamiltonian, N: int) -> SolverReport:
    """N = M - 1: the 2DM is fixed by the hole density matrix and every
    hole density matrix is representable, so I and Q already give the exact
    ground state.  The relaxation has no interior point here."""
    from .oracle import exact_2dm, exact_ground

    E, psi = exact_ground(H, N)
    G = exact_2dm(psi, H.M, N)
    return SolverReport("one-hole", E, G, True, "one-hole", 0, gap=0.0, primal_infeasibility=0.0,
                        dual_infeasibility=0.0, lower_bound=E)


def solve_config(cfg: RunConfig):
    """Run one configuration; returns (report dict, SolverReport or None, exit code)."""
    t0 = time.perf_counter()
    H, N, desc = build_hamiltonian(cfg)
    special = N >= H.M - 1
    if N == H.M - 1 and "Q" not in ConditionSet.parse(cfg.conditions):
        raise ConfigError("N = M - 1 is only supported with the Q condition")
    problem = None if special else build_problem(cfg, H, N)
    t_build = time.perf_counter() - t0
    report: Optional[SolverReport] = None
    rounds = []
    code = EXIT_OK
    error = None
    t1 = time.perf_counter()
    try:
        if N == H.M:
            report = filled_report(H, N)
        elif N == H.M - 1:
            report = one_hole_report(H, N)
        else:
            report = run_solver(cfg, problem)
            extra = []
            for k in range(cfg.sharp_rounds):
                found, new = _sharp_round(problem, report.gamma, N, cfg.seed + k)
                rounds.append({"round": k + 1, "energy": report.energy, "searches": found,
                               "added": len(new)})
                if not new:
                    break
                extra += new
                problem = build_problem(cfg, H, N, extra)
                report = run_solver(cfg, problem)
    except SolverError as exc:
        code, error = EXIT_SOLVER, str(exc)
        report = exc.report
    except InfeasibleStart as exc:
        code, error = EXIT_SOLVER, f"no interior start: {exc}"
    except (np.linalg.LinAlgError, FloatingPointError) as exc:
        code, error = EXIT_SOLVER, f"numerical failure: {exc}"
    t_solve = time.perf_counter() - t1

    out = {"schema": SCHEMA, "version": __version__, "model": desc,
           "conditions": list(ConditionSet.parse(cfg.conditions).labels),
           "solver": cfg.solver,
           "constraints": {"spin": cfg.spin, "nonlin_hopping": cfg.nonlin_hopping,
                           "subsystem": cfg.subsystem, "sharp_rounds": cfg.sharp_rounds},
           "config": asdict(cfg)}
    if report is not None:
        s = report.summary()
        out.update({"energy": s["energy"], "converged": s["converged"] and code == EXIT_OK,
                    "reason": s["reason"], "iterations": s["iterations"], "gap": s["gap"],
                    "lower_bound": s["lower_bound"],
                    "primal_infeasibility": s["primal_infeasibility"],
                    "dual_infeasibility": s["dual_infeasibility"]})
        if cfg.subsystem:
            out["subsystem_occupations"] = [
                subsystem_occupation(report.gamma, N, orbs)
                for orbs in read_subsystems(cfg.subsystem, H.M)]
    else:
        out.update({"energy": None, "converged": False})
    if rounds:
        out["sharp"] = rounds
    if error:
        out["error"] = error
    if cfg.oracle:
        from .oracle import exact_ground

        E0 = exact_ground(H, N)[0]
        out["exact_energy"] = E0
        if out.get("energy") is not None:
            out["gap_to_exact"] = E0 - out["energy"]
    out["timings"] = None if cfg.no_timings else {
        "build": t_build, "solve": t_solve, "total": time.perf_counter() - t0}
    return _jsonable(out), report, code


def write_outputs(cfg: RunConfig, out: dict, report: Optional[SolverReport], N: int, L: int):
    text = json.dumps(out, indent=2, sort_keys=True)
    if cfg.out:
        with open(cfg.out, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    if report is None:
        return
    if cfg.trace:
        write_trace_csv(cfg.trace, [_jsonable(r) for r in report.trace])
    if cfg.gamma_out:
        np.save(cfg.gamma_out, report.gamma)
    if cfg.observables:
        _write_csv(cfg.observables, observables_rows(report.gamma, N, L))


def run(cfg: RunConfig) -> int:
    out, report, code = solve_config(cfg)
    write_outputs(cfg, out, report, out["model"]["particles"], cfg.sites)
    return code


# -- sweep -------------------------------------------------------------------

def _parse_list(text: Optional[str], conv) -> list:
    if text is None:
        return []
    items = [s for s in text.replace(";", ",").split(",") if s.strip()]
    try:
        return [conv(s) for s in items]
    except ValueError:
        raise ConfigError(f"cannot parse list {text!r}") from None


def sweep(cfg: RunConfig) -> tuple:
    """One row per grid point; returns (rows, exit code)."""
    us = _parse_list(cfg.u_list, float)
    ns = _parse_list(cfg.n_list, int)
    if us and ns:
        raise ConfigError("give either a U list or an N list, not both")
    grid = [("U", v, replace(cfg, u=v)) for v in us] + \
           [("N", v, replace(cfg, particles=v)) for v in ns]
    rows = []
    code = EXIT_OK
    for param, value, c in grid:
        c = replace(c, out=None, trace=None, gamma_out=None, observables=None)
        try:
            out, _, rc = solve_config(c.validate())
        except ConfigError as exc:
            rows.append({"param": param, "value": value, "energy": None, "converged": False,
                         "error": str(exc)})
            code = EXIT_SOLVER
            continue
        row = {"param": param, "value": value, "energy": out.get("energy"),
               "converged": out.get("converged"), "iterations": out.get("iterations"),
               "lower_bound": out.get("lower_bound")}
        if "exact_energy" in out:
            row["exact_energy"] = out["exact_energy"]
            row["bound_ok"] = (out.get("energy") is not None
                               and out["energy"] <= out["exact_energy"] + 1e-6)
        if "error" in out:
            row["error"] = out["error"]
        if rc != EXIT_OK:
            code = EXIT_SOLVER
        rows.append(row)
    return rows, code


def convex_in_N(rows: Sequence[dict], tol: float = 1e-8) -> Optional[bool]:
    pts = sorted((r["value"], r["energy"]) for r in rows
                 if r["param"] == "N" and r.get("energy") is not None)
    if len(pts) < 3:
        return None
    from .model import is_convex_table

    return is_convex_table(pts, tol)


def run_sweep(cfg: RunConfig) -> int:
    rows, code = sweep(cfg)
    out = {"schema": SCHEMA, "version": __version__, "rows": rows}
    if any(r["param"] == "N" for r in rows):
        out["convex_in_N"] = convex_in_N(rows)
    if any("bound_ok" in r for r in rows):
        out["all_bounds_ok"] = all(r.get("bound_ok", False) for r in rows)
    text = json.dumps(_jsonable(out), indent=2, sort_keys=True)
    if cfg.out:
        with open(cfg.out, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    if cfg.table:
        keys = ["param", "value", "energy", "converged", "iterations", "lower_bound",
                "exact_energy", "bound_ok", "error"]
        _write_csv(cfg.table, [{k: r.get(k) for k in keys} for r in rows])
    return code


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        ns = build_parser().parse_args(argv)
        cfg = config_from_args(ns)
        if ns.command == "run":
            return run(cfg)
        return run_sweep(cfg)
    except ConfigError as exc:
        print(f"v2dm: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

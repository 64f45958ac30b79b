import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from v2dm.cli import RunConfig, main, read_config_file, sweep
from v2dm.model import hubbard_1d, save_problem


def _run(tmp_path, *args, name="r.json"):
    out = tmp_path / name
    code = main(["run", *args, "--out", str(out)])
    return code, (json.loads(out.read_text()) if out.exists() else None)


def test_run_writes_report(tmp_path):
    code, r = _run(tmp_path, "--sites", "3", "--particles", "2", "--u", "4", "--oracle")
    assert code == 0
    assert r["schema"] == 1 and r["converged"]
    assert r["conditions"] == ["I", "Q", "G"]
    assert r["model"]["type"] == "hubbard" and r["model"]["orbitals"] == 6
    assert r["energy"] <= r["exact_energy"] + 1e-6
    assert r["gap_to_exact"] == pytest.approx(r["exact_energy"] - r["energy"])
    assert set(r["timings"]) == {"build", "solve", "total"}


def test_hubbard_strong_coupling_example(tmp_path):
    code, r = _run(tmp_path, "--sites", "6", "--particles", "5", "--u", "50")
    assert code == 0
    assert r["energy"] == pytest.approx(-3.55, abs=0.02)


@pytest.mark.parametrize("args", [
    ["--conditions", "I,Q,X"],
    ["--solver", "simplex"],
    ["--sites", "1"],
    ["--sites", "3", "--particles", "9"],
    ["--model", "file"],
    ["--tol", "-1"],
    ["--spin", "2", "--sites", "3", "--particles", "2"],
    ["--nonlin-hopping", "--solver", "bp"],
    ["--model", "pairing", "--observables", "o.csv"],
    ["--bogus"],
])
def test_config_errors_exit_3(tmp_path, args, capsys):
    assert main(["run", *args, "--out", str(tmp_path / "x.json")]) == 3
    assert "configuration error" in capsys.readouterr().err
    assert not (tmp_path / "x.json").exists()


def test_solver_failure_exit_2(tmp_path):
    code, r = _run(tmp_path, "--sites", "4", "--particles", "3", "--u", "4", "--max-iter", "1")
    assert code == 2
    assert r["converged"] is False and "error" in r
    assert r["energy"] is not None


@pytest.mark.parametrize("solver", ["dual-pr", "pd-pc", "bp"])
def test_all_solvers_from_cli(tmp_path, solver):
    code, r = _run(tmp_path, "--sites", "3", "--particles", "2", "--u", "4", "--solver", solver,
                   "--oracle")
    assert code == 0
    assert r["energy"] == pytest.approx(r["exact_energy"], abs=1e-4)


def test_outputs_trace_gamma_observables(tmp_path):
    tr, gm, ob = tmp_path / "t.csv", tmp_path / "g.npy", tmp_path / "o.csv"
    code, r = _run(tmp_path, "--sites", "4", "--particles", "4", "--u", "4", "--trace", str(tr),
                   "--gamma-out", str(gm), "--observables", str(ob))
    assert code == 0
    rows = list(csv.DictReader(open(tr)))
    assert len(rows) >= 1 and "energy" in rows[0]
    G = np.load(gm)
    assert G.shape == (28, 28)
    obs = list(csv.DictReader(open(ob)))
    assert [k for k in obs[0]] == ["k", "n_k", "C_k", "S_k"] and len(obs) == 4
    assert sum(float(o["n_k"]) for o in obs) == pytest.approx(4.0, abs=1e-6)


def test_config_file_and_flag_override(tmp_path):
    cfgf = tmp_path / "c.cfg"
    cfgf.write_text("# small run\nsites = 3\nparticles = 2\nu = 4\nconditions = I,Q\n"
                    "no-timings = yes\n")
    assert read_config_file(str(cfgf))["no_timings"] is True
    code, r = _run(tmp_path, "--config", str(cfgf), "--conditions", "I,Q,G")
    assert code == 0
    assert r["config"]["u"] == 4.0 and r["conditions"] == ["I", "Q", "G"]
    assert r["timings"] is None


@pytest.mark.parametrize("body", ["sites 3\n", "colour = red\n", "sites = three\n"])
def test_config_file_errors(tmp_path, body):
    cfgf = tmp_path / "c.cfg"
    cfgf.write_text(body)
    assert main(["run", "--config", str(cfgf)]) == 3


def test_reports_are_deterministic(tmp_path):
    args = ["--sites", "3", "--particles", "2", "--u", "4", "--no-timings", "--solver", "pd-pc"]
    _, first = _run(tmp_path, *args)
    a = (tmp_path / "r.json").read_bytes()
    _run(tmp_path, *args)
    assert first["converged"]
    assert (tmp_path / "r.json").read_bytes() == a


def test_file_model(tmp_path):
    p = tmp_path / "h.txt"
    save_problem(p, hubbard_1d(3, 1.0, 4.0), 2)
    code, r = _run(tmp_path, "--model", "file", "--file", str(p), "--oracle")
    assert code == 0 and r["model"]["particles"] == 2
    assert r["energy"] <= r["exact_energy"] + 1e-6


def test_pairing_model(tmp_path):
    code, r = _run(tmp_path, "--model", "pairing", "--sites", "3", "--particles", "2", "--u", "1",
                   "--oracle")
    assert code == 0 and r["model"]["type"] == "pairing"
    assert r["energy"] == pytest.approx(r["exact_energy"], abs=1e-4)


def test_spin_constraint(tmp_path):
    code, r = _run(tmp_path, "--sites", "3", "--particles", "3", "--u", "4", "--spin", "0.5",
                   "--oracle")
    assert code == 0 and r["constraints"]["spin"] == 0.5
    assert r["energy"] <= r["exact_energy"] + 1e-6


def test_subsystem_occupations_reported(tmp_path):
    sub = tmp_path / "sub.txt"
    sub.write_text("0 1 2 3\n")
    code, r = _run(tmp_path, "--sites", "3", "--particles", "3", "--u", "4", "--subsystem", str(sub))
    assert code == 0
    assert 0 <= r["subsystem_occupations"][0] <= 4
    sub.write_text("0 99\n")
    assert main(["run", "--sites", "3", "--particles", "3", "--subsystem", str(sub)]) == 3


def test_filled_and_one_hole_cases(tmp_path):
    code, r = _run(tmp_path, "--sites", "3", "--particles", "6", "--u", "4", "--oracle")
    assert code == 0 and r["reason"] == "filled"
    assert r["energy"] == pytest.approx(r["exact_energy"])
    code, r = _run(tmp_path, "--sites", "3", "--particles", "5", "--u", "4", "--oracle")
    assert code == 0 and r["energy"] == pytest.approx(r["exact_energy"])
    assert main(["run", "--sites", "3", "--particles", "5", "--conditions", "I,G"]) == 3


def test_sweep_u_list(tmp_path):
    out, table = tmp_path / "s.json", tmp_path / "s.csv"
    code = main(["sweep", "--sites", "4", "--particles", "3", "--u-list", "0,1,4,8", "--oracle",
                 "--out", str(out), "--table", str(table)])
    assert code == 0
    r = json.loads(out.read_text())
    assert [row["value"] for row in r["rows"]] == [0, 1, 4, 8]
    assert r["all_bounds_ok"] is True
    assert len(list(csv.DictReader(open(table)))) == 4


def test_sweep_empty_grid():
    rows, code = sweep(RunConfig(sites=3, particles=2))
    assert rows == [] and code == 0


def test_sweep_n_list_fragment_is_convex(tmp_path):
    out = tmp_path / "s.json"
    code = main(["sweep", "--sites", "3", "--u", "8", "--n-list", "3,4,5,6", "--out", str(out)])
    assert code == 0
    r = json.loads(out.read_text())
    assert len(r["rows"]) == 4 and r["convex_in_N"] is True


def test_sweep_records_failures_and_continues(tmp_path):
    out = tmp_path / "s.json"
    code = main(["sweep", "--sites", "3", "--n-list", "2,9", "--out", str(out)])
    assert code == 2
    rows = json.loads(out.read_text())["rows"]
    assert rows[0]["converged"] and "error" in rows[1]


def test_sweep_rejects_two_grids():
    assert main(["sweep", "--sites", "3", "--u-list", "1", "--n-list", "2"]) == 3


def test_console_entry_point(tmp_path):
    out = tmp_path / "r.json"
    res = subprocess.run([sys.executable, "-m", "v2dm.cli", "run", "--sites", "2", "--particles",
                          "2", "--out", str(out)], capture_output=True, text=True)
    assert res.returncode == 0
    assert json.loads(out.read_text())["energy"] == pytest.approx(-4.0, abs=1e-6)

import csv
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bvbox import build_mesh
from bvbox.cli import main, parse_mesh_list
from bvbox.config import (PRESETS, ConfigError, ExperimentConfig, from_dict, load, loads,
                          preset)
from bvbox.export import fmt, read_field, write_field


def small_config(tmp_path, family="linear", nx=8, **problem):
    cfg = preset("example1")
    cfg.problem.family = family
    for k, v in problem.items():
        setattr(cfg.problem, k, v)
    cfg.mesh.nx = cfg.mesh.ny = nx
    cfg.output.directory = str(tmp_path / "out")
    path = tmp_path / "cfg.toml"
    cfg.save(path)
    return path


def test_defaults_match_experiment_settings():
    cfg = ExperimentConfig()
    assert cfg.continuation.eps0 == 0.5 and cfg.continuation.eps_factor == 0.5
    assert cfg.continuation.rho0 == 2.0 and cfg.continuation.rho_factor == 2.0
    assert cfg.continuation.tol_R_rho == 1e-4 and cfg.continuation.tol_R_eps == 1e-3
    assert (cfg.newton.phi, cfg.newton.tau, cfg.newton.eta, cfg.newton.p_exp) == \
        (0.5, 1e-4, 1e-8, 2.1)
    assert cfg.newton.step_tol == 1e-10
    assert cfg.problem.beta == 1e-4
    assert (cfg.problem.lower, cfg.problem.upper) == (-10.0, 10.0)
    assert loads("") == cfg


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_preset_round_trip(name):
    cfg = preset(name)
    again = loads(cfg.dumps())
    assert again == cfg
    assert loads(again.dumps()).dumps() == cfg.dumps()


@settings(max_examples=40, deadline=None)
@given(beta=st.floats(1e-8, 1e3), nx=st.integers(1, 300), lower=st.floats(-1e3, -1e-3),
       upper=st.one_of(st.floats(1e-3, 1e3), st.sampled_from(["8*sin(pi*x1)*sin(pi*x2)",
                                                                "-4*(x1-0.5)**2 - 4*x2**2 + 10"])),
       eps0=st.floats(1e-3, 0.99), max_iter=st.integers(1, 1000))
def test_round_trip_property(beta, nx, lower, upper, eps0, max_iter):
    cfg = ExperimentConfig()
    cfg.problem.beta = beta
    cfg.problem.lower = lower
    cfg.problem.upper = upper
    cfg.mesh.nx = nx
    cfg.continuation.eps0 = eps0
    cfg.newton.max_iter = max_iter
    assert loads(cfg.dumps()) == cfg


@pytest.mark.parametrize("text,line", [
    ("[problem]\nfamily = 'linear'\nlower = -inf\n", 3),
    ("[problem]\nupper = nan\n", 2),
    ("[problem]\nfamily = 'heat'\n", 2),
    ("[problem]\n\nbeta = -1.0\n", 3),
    ("[problem]\nupper = 'import os'\n", 2),
    ("[mesh]\nnx = 0\n", 2),
    ("[mesh]\nnx = 'ten'\n", 2),
    ("[newton]\nphi = 1.5\n", 1),
    ("[continuation]\nbogus = 1\n", 2),
    ("[solver]\nx = 1\n", 1),
    ("[problem]\nbeta = = 1\n", 2),
    ("[problem]\nlower = 5.0\nupper = 1.0\n", 3),
])
def test_config_errors_carry_line_numbers(text, line):
    with pytest.raises(ConfigError) as info:
        loads(text, source="bad.toml")
    assert info.value.line == line
    assert f"bad.toml:{line}:" in str(info.value)


def test_cli_rejects_infinite_bounds(tmp_path, capsys):
    path = tmp_path / "c.toml"
    path.write_text("[problem]\nlower = -inf\n")
    assert main(["run", str(path)]) == 2
    assert "finite" in capsys.readouterr().err


def test_cli_missing_config(tmp_path):
    assert main(["run", str(tmp_path / "nope.toml")]) == 2


def test_cli_bounds_crossing_on_mesh(tmp_path):
    path = small_config(tmp_path, lower=0.0, upper="8*sin(pi*x1)*sin(pi*x2)")
    assert main(["-q", "run", str(path)]) == 2


def test_field_round_trip(tmp_path):
    mesh = build_mesh((-1, 1, 0, 2), 5, 3)
    rng = np.random.default_rng(0)
    u = rng.standard_normal(mesh.num_nodes) * 1e3
    write_field(tmp_path / "u.txt", mesh, u, header="u")
    back = read_field(tmp_path / "u.txt")
    assert back.shape == (4, 6)
    assert np.array_equal(back.ravel(), u)


def test_fmt():
    assert fmt(None) == "" and fmt(float("nan")) == ""
    assert fmt(3) == "3" and fmt(True) == "true"
    assert float(fmt(0.1)) == 0.1
    assert fmt(1 / 3) == "0.33333333333333331"


def test_mesh_list():
    assert parse_mesh_list("16, 32,64x32") == [(16, 16), (32, 32), (64, 32)]
    for bad in ("", "a", "0", "3x-1"):
        with pytest.raises(ConfigError):
            parse_mesh_list(bad)


def test_run_outputs_are_deterministic(tmp_path, capsys):
    path = small_config(tmp_path, family="semilinear")
    outs = []
    for name in ("a", "b"):
        assert main(["-q", "run", str(path), "--out", str(tmp_path / name)]) == 0
        outs.append(tmp_path / name)
    for rel in ("records.csv", "summary.json", "fields/u.txt", "fields/y.txt", "fields/p.txt",
                "fields/lambda_a.txt", "fields/lambda_b.txt", "config.toml"):
        assert (outs[0] / rel).read_bytes() == (outs[1] / rel).read_bytes()
    summary = json.loads((outs[0] / "summary.json").read_text())
    assert summary["status"] == "ok" and summary["converged"]
    assert summary["eps_final"] == 2.0 ** -summary["iterations"]
    rows = list(csv.DictReader(open(outs[0] / "records.csv")))
    assert len(rows) == summary["iterations"]
    assert rows[-1]["E_u"] == "" and rows[0]["E_u"] != ""
    for col in ("k", "E_u", "E_J", "R_eps", "R_rho"):
        assert col in rows[0]
    assert load(outs[0] / "config.toml") == load(path)


def test_solver_failure_exit_code(tmp_path, monkeypatch):
    from bvbox import continuation
    from bvbox.newton import StagnationError

    real = continuation.newton_solve
    calls = []

    def flaky(params, u, cfg, y0=None):
        calls.append(params.epsilon)
        if len(calls) == 3:
            raise StagnationError("injected")
        return real(params, u, cfg, y0=y0)

    monkeypatch.setattr(continuation, "newton_solve", flaky)
    path = small_config(tmp_path)
    assert main(["-q", "run", str(path)]) == 3
    summary = json.loads((tmp_path / "out" / "summary.json").read_text())
    assert summary["status"] == "aborted" and summary["partial"]
    assert summary["iterations"] == 2 and not summary["converged"]
    assert "injected" in summary["error"]
    rows = list(csv.DictReader(open(tmp_path / "out" / "records.csv")))
    assert len(rows) == 2


def test_sweep(tmp_path, capsys):
    path = small_config(tmp_path, family="semilinear")
    code = main(["-q", "sweep", str(path), "--mesh-list", "4,8", "--jobs", "2",
                 "--out", str(tmp_path / "sw")])
    assert code == 0
    out = capsys.readouterr().out
    assert "#it" in out and "#newt" in out and "eps_final" in out
    rows = list(csv.DictReader(open(tmp_path / "sw" / "sweep.csv")))
    assert [r["nx"] for r in rows] == ["4", "8"]
    assert all(math.isclose(float(r["h"]), 2 * math.sqrt(2) / int(r["nx"])) for r in rows)
    single = main(["-q", "sweep", str(path), "--mesh-list", "8", "--out", str(tmp_path / "one")])
    assert single == 0
    assert (tmp_path / "one" / "mesh_8x8" / "summary.json").read_text() == \
        (tmp_path / "sw" / "mesh_8x8" / "summary.json").read_text()


def test_check_passes_for_constant_bounds(tmp_path, capsys):
    path = small_config(tmp_path, nx=12)
    assert main(["-q", "check", str(path)]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out
    assert "disjoint multiplier supports" in out


def test_check_nonconstant_bounds_is_observational(tmp_path, capsys):
    path = small_config(tmp_path, nx=12, lower=-100.0, upper="-4*(x1-0.5)**2 - 4*x2**2 + 10")
    assert main(["-q", "check", str(path)]) == 0
    out = capsys.readouterr().out
    assert "observational only" in out


def test_write_config(tmp_path, capsys):
    assert main(["write-config", "example2_h044"]) == 0
    cfg = loads(capsys.readouterr().out)
    assert cfg.mesh.nx == 64 and cfg.problem.family == "semilinear"
    target = tmp_path / "x.toml"
    assert main(["write-config", "bounds_sin", "-o", str(target)]) == 0
    assert load(target).problem.upper == "8*sin(pi*x1)*sin(pi*x2)"


def test_from_dict_rejects_non_table():
    with pytest.raises(ConfigError):
        from_dict({"problem": 3})

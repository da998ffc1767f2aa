import csv
import json
import math

import pytest

import jumpsplit.cli as cli
from jumpsplit.bounds import TheoryParams, budget, constants, select_parameters
from jumpsplit.cli import CSV_COLUMNS, main
from jumpsplit.config import ConfigError, parse_config
from jumpsplit.model import make_bs_default_model
from jumpsplit.oracle import OracleConfig, mc_terminal

THEORY = {"L": 0.001, "L1": 0.001, "L2": 0.001, "C_eta": 0.001, "T": 0.05, "p": 1, "q": 4, "d": 1,
          "xi_second_moment": 1, "xi_q_moment": 4}
BUDGET = {"N": 4194304, "delta": 0.015625, "m_comp": 17179869184, "K": 10, "J": 536870912, "theta": 1}


def write(tmp_path, obj, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(obj) if not isinstance(obj, str) else obj, encoding="utf-8")
    return str(p)


def read_csv(path):
    with open(path, encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def const_cfg(**kw):
    base = {"model": {"preset": "bs_default", "nonlinearity": {"constant": -0.5}, "terminal": {"constant": 7.0}},
            "dims": [1, 3], "runs": 1, "seed": 3}
    base.update(kw)
    return base


def test_constant_fixture_row(tmp_path):
    out = tmp_path / "out"
    assert main(["run", "--config", write(tmp_path, const_cfg()), "--out", str(out), "--quiet"]) == 0
    rows = read_csv(out / "results.csv")
    assert list(rows[0]) == list(CSV_COLUMNS)
    assert [r["d"] for r in rows] == ["1", "3"]
    for r in rows:
        assert r["method"] == "random"
        assert float(r["std_u0"]) == 0.0
        assert abs(float(r["mean_u0"]) - (7.0 - 0.5 / 3)) <= 1e-5
    rec = json.loads((out / "runs" / "d1_random_r0.json").read_text())
    assert rec["u0"] == float(rows[0]["mean_u0"]) and "diagnostics" in rec


def _body_without_runtime(path):
    rows = read_csv(path)
    return [[r[c] for c in CSV_COLUMNS if c != "mean_runtime_s"] for r in rows]


def test_rerun_identical_csv(tmp_path):
    cfg = write(tmp_path, {"model": {"preset": "merton_default"}, "dims": [2], "runs": 2, "seed": 11,
                           "euler": {"m_comp": 20}, "train": {"J": 200}})
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", "--config", cfg, "--out", str(a), "--quiet"]) == 0
    assert main(["run", "--config", cfg, "--out", str(b), "--quiet"]) == 0
    assert _body_without_runtime(a / "results.csv") == _body_without_runtime(b / "results.csv")
    ra = json.loads((a / "runs" / "d2_random_r1.json").read_text())
    rb = json.loads((b / "runs" / "d2_random_r1.json").read_text())
    assert ra["u0"] == rb["u0"] and ra["seed"] == rb["seed"]


def test_seeds_stable_when_dims_added(tmp_path):
    small = write(tmp_path, {"model": {"preset": "bs_default"}, "dims": [2], "runs": 1, "train": {"J": 100}}, "s.json")
    big = write(tmp_path, {"model": {"preset": "bs_default"}, "dims": [1, 2], "runs": 1, "train": {"J": 100}}, "b.json")
    main(["run", "--config", small, "--out", str(tmp_path / "s"), "--quiet"])
    main(["run", "--config", big, "--out", str(tmp_path / "b"), "--quiet"])
    a = json.loads((tmp_path / "s" / "runs" / "d2_random_r0.json").read_text())
    b = json.loads((tmp_path / "b" / "runs" / "d2_random_r0.json").read_text())
    assert a["u0"] == b["u0"]


def test_bounds_json_matches_module(tmp_path, capsys):
    cfg = write(tmp_path, {"theory": THEORY, "budget": BUDGET, "select": {"epsilon_target": 0.5, "K": 10}})
    assert main(["bounds", "--config", cfg]) == 0
    rep = json.loads(capsys.readouterr().out)
    P = TheoryParams(**THEORY)
    assert rep["constants"] == constants(P).as_dict()
    assert rep["budget"] == budget(P, epsilon_uat=0.0, **BUDGET).as_dict()
    assert rep["budget"]["total"] == pytest.approx(0.123201, abs=1e-6)
    assert rep["selected"] == select_parameters(P, 0.5, 10).as_dict()
    assert rep["constants"]["C0"] == pytest.approx(84491.42107362302, rel=1e-12)
    assert rep["constants"]["C_hat"] == pytest.approx(792.4877835620933, rel=1e-12)


def test_bounds_csv(tmp_path, capsys):
    cfg = write(tmp_path, {"theory": THEORY, "budget": BUDGET})
    assert main(["bounds", "--config", cfg, "--format", "csv"]) == 0
    rows = list(csv.reader(capsys.readouterr().out.splitlines()))
    assert rows[0] == ["section", "name", "value", "log_value"]
    table = {(r[0], r[1]): float(r[2]) for r in rows[1:]}
    k = constants(TheoryParams(**THEORY)).as_dict()
    for name, v in k.items():
        assert table[("constants", name)] == v
    assert table[("budget", "total")] == pytest.approx(0.123201, abs=1e-6)


def test_bounds_infeasible_exit(tmp_path, capsys):
    th = dict(THEORY, L=1.0, L1=1.0, L2=1.0, C_eta=1.0, T=1.0)
    cfg = write(tmp_path, {"theory": th, "select": {"epsilon_target": 0.5, "K": 10}})
    assert main(["bounds", "--config", cfg]) == 1
    assert "InfeasibleError" in capsys.readouterr().err


def test_oracle_pass_through(tmp_path, capsys):
    obj = {"model": {"preset": "bs_default", "nonlinearity": "zero", "terminal": "identity"},
           "dims": [1], "oracle": {"samples": 5000, "grid_N": 24, "seed": 4}}
    out = tmp_path / "o.json"
    assert main(["oracle", "--config", write(tmp_path, obj), "--out", str(out)]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert json.loads(out.read_text()) == rep
    p = make_bs_default_model(1).replace(f=lambda t, x, v: 0.0 * v, g=lambda x: x[..., 0])
    ref = mc_terminal(p, OracleConfig(samples=5000, grid_N=24, seed=4, m_comp=1))
    assert rep["kind"] == "mc_terminal" and rep["d"] == 1
    assert rep["estimate"] == ref["mean"] and rep["stderr"] == ref["stderr"]
    assert set(rep) >= {"estimate", "stderr", "evals"}


def test_oracle_picard(tmp_path, capsys):
    obj = {"model": {"preset": "bs_default"}, "dims": [1],
           "oracle": {"kind": "picard", "samples": 300, "picard_iters": 1, "grid_N": 6, "inner_samples": 2}}
    assert main(["oracle", "--config", write(tmp_path, obj)]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["kind"] == "picard" and len(rep["iterates"]) == 2


def test_unknown_subcommand(capsys):
    assert main(["frobnicate"]) != 0
    assert "usage" in capsys.readouterr().err
    assert main([]) != 0
    assert "usage" in capsys.readouterr().err


def test_config_errors_name_field_and_line(tmp_path, capsys):
    assert main(["run", "--config", write(tmp_path, '{"model": {\n "preset": }')]) == 2
    assert "line 2" in capsys.readouterr().err
    assert main(["run", "--config", write(tmp_path, {"model": {"preset": "bs_default"}, "dimz": [1]})]) == 2
    assert "dimz" in capsys.readouterr().err
    with pytest.raises(ConfigError, match="runs"):
        parse_config(json.dumps({"model": {"preset": "bs_default"}, "runs": 0}))
    with pytest.raises(ConfigError, match="preset"):
        parse_config(json.dumps({"model": {"preset": "heston"}}))
    assert main(["run", "--config", str(tmp_path / "missing.json")]) == 2


def test_partial_failure(tmp_path, monkeypatch):
    real = cli.solve
    calls = []

    def flaky(problem, config):
        calls.append(1)
        if len(calls) == 2:
            raise FloatingPointError("boom")
        return real(problem, config)

    monkeypatch.setattr(cli, "solve", flaky)
    out = tmp_path / "out"
    rc = main(["run", "--config", write(tmp_path, const_cfg(runs=2)), "--out", str(out), "--quiet"])
    assert rc == 1
    rows = read_csv(out / "results.csv")
    assert len(rows) == 2
    assert float(rows[1]["std_u0"]) == 0.0
    assert "boom" in json.loads((out / "runs" / "d1_random_r1.json").read_text())["error"]


def test_path_dump(tmp_path):
    out = tmp_path / "out"
    cfg = write(tmp_path, {"model": {"preset": "bs_default"}, "dims": [2], "runs": 1, "train": {"J": 5}})
    assert main(["run", "--config", cfg, "--out", str(out), "--dump-paths", "--quiet"]) == 0
    lines = (out / "paths" / "d2_r0.csv").read_text().splitlines()
    assert lines[0] == "j,k,x_1,x_2" and len(lines) == 1 + 5 * 13


def test_bs_sweep_random_faster(tmp_path):
    out = tmp_path / "out"
    cfg = write(tmp_path, {"model": {"preset": "bs_default"}, "dims": [1, 10, 100], "method": "both", "runs": 1})
    assert main(["run", "--config", cfg, "--out", str(out), "--quiet"]) == 0
    rows = read_csv(out / "results.csv")
    assert [(r["d"], r["method"]) for r in rows] == [
        (d, m) for d in ("1", "10", "100") for m in ("random", "deterministic")]
    for i in range(0, 6, 2):
        assert float(rows[i]["mean_runtime_s"]) < float(rows[i + 1]["mean_runtime_s"])
        assert math.isfinite(float(rows[i]["mean_u0"]))

import json
import math

import pytest

from lightasep import cli


def run(tmp_path, *argv):
    return cli.run(["--outdir", str(tmp_path), *argv])


def test_phase_json(tmp_path, capsys):
    assert run(tmp_path, "phase", "--q", "0", "--alpha", "1", "--beta", "1") == 0
    out = json.loads(capsys.readouterr().out)
    assert out["phase"] == "MaxCurrent" and out["region"] == "Fan"
    assert out["bulk"] == 0.5
    assert json.loads((tmp_path / "phase.json").read_text()) == out
    assert (tmp_path / "phase.manifest.json").exists()


def test_phase_coexistence_profile(tmp_path, capsys):
    assert run(tmp_path, "phase", "--A", "2", "--C", "2") == 0
    out = json.loads(capsys.readouterr().out)
    assert out["bulk"] == "linear-profile"
    assert out["bulk_endpoints"] == pytest.approx([1 / 3, 2 / 3])


def test_mixed_parameterizations_rejected(tmp_path):
    assert run(tmp_path, "phase", "--alpha", "1", "--beta", "1", "--B", "-0.5") == 2


def test_verify_relation(tmp_path, capsys):
    assert run(tmp_path, "exact", "verify-relation", "--n", "4", "--q", "0.3", "--alpha", "0.7", "--beta", "1.2") == 0
    assert capsys.readouterr().out.startswith("residual ")
    rows = cli.parse_csv((tmp_path / "exact-verify-relation.csv").read_text())
    assert rows[0]["passed"] is True and rows[0]["n"] == 4


def test_verify_relation_fails_on_tight_tol(tmp_path):
    assert run(tmp_path, "exact", "verify-relation", "--n", "4", "--alpha", "0.7", "--beta", "1.2",
               "--tol", "0") == 1


def test_exact_outputs(tmp_path):
    assert run(tmp_path, "exact", "stationary", "--n", "3", "--alpha", "1", "--beta", "1") == 0
    rows = cli.parse_csv((tmp_path / "exact-stationary.csv").read_text())
    assert [r["site"] for r in rows] == [1, 2, 3]
    states = cli.parse_csv((tmp_path / "exact-stationary-states.csv").read_text())
    assert sum(r["prob"] for r in states) == pytest.approx(1)
    assert run(tmp_path, "exact", "loc", "--n", "3", "--alpha", "1", "--beta", "1") == 0
    assert run(tmp_path, "exact", "mix", "--n", "1", "--r", "0", "--q", "0", "--alpha", "1", "--beta", "1",
               "--eps", "0.5") == 0
    mix = cli.parse_csv((tmp_path / "exact-mix.csv").read_text())
    assert mix[0]["tmix"] == pytest.approx(0.0, abs=1e-6)


def test_usage_errors(tmp_path):
    assert run(tmp_path, "exact", "stationary") == 2
    assert run(tmp_path, "nonsense") == 2
    assert run(tmp_path, "simulate", "--n", "4", "--t", "1", "--alpha", "1", "--beta", "1") == 2
    assert run(tmp_path, "phase", "--q", "1.5", "--alpha", "1", "--beta", "1") == 2
    assert run(tmp_path, "simulate", "--n", "4", "--t", "1", "--seed", "-1", "--alpha", "1", "--beta", "1") == 2


def test_numeric_guard_exit(tmp_path):
    assert run(tmp_path, "mpa", "density", "--n", "4", "--A", "2", "--B", "-0.5", "--C", "2", "--D", "-0.5") == 3


def test_mpa_commands(tmp_path, capsys):
    assert run(tmp_path, "mpa", "density", "--n", "6", "--sites", "1,6", "--alpha", "1", "--beta", "1") == 0
    rows = cli.parse_csv((tmp_path / "mpa-density.csv").read_text())
    assert [r["site"] for r in rows] == [1, 6]
    for method in ("direct", "relation"):
        assert run(tmp_path, "mpa", "loc1", "--n", "5", "--method", method, "--A", "0.5") == 0
    assert run(tmp_path, "mpa", "verify-dehp", "--q", "0.3", "--alpha", "1", "--beta", "1") == 0
    assert run(tmp_path, "mpa", "sigma-aw", "--t-list", "0.5", "--A", "0", "--precision", "high") == 0
    rows = cli.parse_csv((tmp_path / "mpa-sigma-aw.csv").read_text())
    assert rows[0]["sigma_left"] == pytest.approx(0.75, abs=1e-12)


def test_csv_round_trip():
    rows = [dict(a=1, b=0.1 + 0.2, c=True, d="x"), dict(a=2, b=math.inf, c=False, d="y z")]
    back = cli.parse_csv(cli.to_csv(rows))
    assert back[0] == rows[0] and back[1]["b"] == math.inf and back[1]["d"] == "y z"
    assert cli.to_csv([], ["x", "y"]) == "x,y\n"
    assert cli.parse_csv("x,y\n") == []


def test_json_float_format():
    text = cli.to_json(dict(x=0.1, y=[1, math.nan]))
    assert "0.10000000000000001" in text and "NaN" in text


def test_rle():
    assert cli.rle([1, 1, 1, 0, 0, 2]) == "1*3 0*2 2*1"


def test_env_outdir(tmp_path, monkeypatch):
    monkeypatch.setenv("LIGHTASEP_OUTDIR", str(tmp_path / "envout"))
    assert cli.run(["phase", "--A", "0.5"]) == 0
    assert (tmp_path / "envout" / "phase.json").exists()


def test_simulate_deterministic(tmp_path):
    args = ["simulate", "--n", "6", "--r", "1", "--t", "20", "--seed", "9", "--reps", "2", "--snapshots",
            "--q", "0.2", "--alpha", "0.7", "--beta", "0.5"]
    texts = []
    for sub in ("a", "b"):
        assert run(tmp_path / sub, *args) == 0
        texts.append(((tmp_path / sub / "simulate.csv").read_text(),
                      (tmp_path / sub / "simulate-snapshots.txt").read_text()))
    assert texts[0] == texts[1]
    rows = cli.parse_csv(texts[0][0])
    assert {r["rep"] for r in rows} == {0, 1}
    manifest = json.loads((tmp_path / "a" / "simulate.manifest.json").read_text())
    assert manifest["seed"] == 9 and manifest["command"] == "simulate" and "created" in manifest


def test_simulate_init_file(tmp_path):
    f = tmp_path / "init.txt"
    f.write_text("1220\n")
    assert run(tmp_path, "simulate", "--n", "4", "--r", "2", "--t", "5", "--seed", "1", "--init", "file", "--init-file", str(f),
               "--alpha", "1", "--beta", "1") == 0
    rows = cli.parse_csv((tmp_path / "simulate.csv").read_text())
    assert rows[0]["loc_1"] == 2 and rows[0]["loc_2"] == 3


def test_experiment_with_config(tmp_path, capsys):
    cfg = tmp_path / "cfg.txt"
    cfg.write_text("n_list = 5,10\nA: 0.5\n")
    assert run(tmp_path, "experiment", "boundary-density", "--config", str(cfg), "--seed", "1") == 0
    summary = json.loads((tmp_path / "experiment-boundary-density.json").read_text())
    assert summary["config"]["n_list"] == [5, 10]
    assert "terminal_within_tol" in capsys.readouterr().out

import json
import math

import pytest

from cfwp.cli import apply_override, main
from cfwp.errors import ConfigError


def _write(tmp_path, doc, name="run.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc), encoding="utf-8")
    return str(path)


def test_check_iwai_katayama(configs_dir, capsys):
    code = main(["check", "--config", str(configs_dir / "iwai-katayama.json")])
    assert code == 0
    report = json.loads(capsys.readouterr().out)
    assert report["aggregate"] == "holds"
    assert [r["condition"] for r in report["hypotheses"]] == ["int", "a'", "b'", "c'"]


def test_check_reports_failed_hypothesis(configs_dir, tmp_path):
    out = tmp_path / "check.json"
    code = main(["check", "--config", str(configs_dir / "euclidean-alpha-half.json"), "--out", str(out)])
    assert code == 2
    report = json.loads(out.read_text(encoding="utf-8"))
    statuses = {r["condition"]: r["status"] for r in report["hypotheses"]}
    assert statuses["a"] == "fails"


def test_malformed_config_is_a_config_error(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{\"geometry\": ", encoding="utf-8")
    assert main(["check", "--config", str(path)]) == 64


def test_missing_config_file(tmp_path):
    assert main(["check", "--config", str(tmp_path / "absent.json")]) == 74


def test_check_on_underflowing_gamma_reports_failed_int_condition(tmp_path, capsys):
    path = _write(tmp_path, {"geometry": {"m": 1, "alpha": "t/sqrt(2)", "beta": "t", "gamma": "exp(-t)"}})
    assert main(["check", "--config", path]) == 2
    report = json.loads(capsys.readouterr().out)
    statuses = {r["condition"]: r["status"] for r in report["hypotheses"]}
    assert statuses["int"] == "fails"


def test_expression_errors_map_to_config_exit_code(tmp_path):
    path = _write(tmp_path, {"geometry": {"m": 1, "alpha": "t +* 2", "beta": "t"}})
    assert main(["check", "--config", path]) == 64


def test_solve_mode_requires_mode(config_doc, tmp_path):
    doc = config_doc("euclidean.json")
    del doc["mode"]
    assert main(["solve-mode", "--config", _write(tmp_path, doc)]) == 64


def test_solve_mode_without_bounded_solution_writes_no_csv(configs_dir, tmp_path, capsys):
    csv_dir = tmp_path / "csv"
    code = main(["solve-mode", "--config", str(configs_dir / "euclidean.json"),
                 "--set", "mode.lambda=0", "--csv-dir", str(csv_dir)])
    assert code == 0
    verdict = json.loads(capsys.readouterr().out)
    assert verdict["verdict"] == "no-L2"
    assert verdict["bounded_dim"] == 0
    assert not csv_dir.exists() or not list(csv_dir.iterdir())


def test_solve_mode_writes_trajectory_csv(configs_dir, tmp_path):
    csv_dir = tmp_path / "csv"
    out = tmp_path / "verdict.json"
    code = main(["solve-mode", "--config", str(configs_dir / "euclidean.json"),
                 "--csv-dir", str(csv_dir), "--out", str(out)])
    assert code == 0
    assert json.loads(out.read_text(encoding="utf-8"))["verdict"] == "no-L2"
    lines = (csv_dir / "trajectory_0.csv").read_text(encoding="utf-8").splitlines()
    assert lines[0] == "t,U,W"
    assert float(lines[1].split(",")[0]) == 1e-6


def test_lemmas_on_euclidean(configs_dir, capsys):
    assert main(["lemmas", "--config", str(configs_dir / "euclidean.json")]) == 0
    assert json.loads(capsys.readouterr().out)["all_passed"]


def test_sweep_small_grid(config_doc, tmp_path, capsys):
    doc = config_doc("euclidean.json")
    doc["sweep"] = {"k_range": [0, 0], "epsilon_values": [1], "lambda_grid": [0, 1.4142135623730951]}
    assert main(["sweep", "--config", _write(tmp_path, doc)]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["summary"]["fractions"]["no-L2"] == "100%"
    assert [entry["boundedDim"] for entry in report["grid"]] == [0, 1]


def test_reparam_with_unit_gamma(tmp_path):
    doc = {"geometry": {"m": 1, "alpha": "t/sqrt(2)", "beta": "t", "gamma": "1"},
           "reparam": {"samples": 16}}
    out = tmp_path / "table.csv"
    assert main(["reparam", "--config", _write(tmp_path, doc), "--out", str(out)]) == 0
    lines = out.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "s,alpha,beta"
    assert len(lines) == 17
    s, alpha, beta = (float(x) for x in lines[8].split(","))
    assert alpha == pytest.approx(s / math.sqrt(2.0), rel=1e-9)
    assert beta == pytest.approx(s, rel=1e-9)


def test_reparam_without_gamma_tabulates_profiles(configs_dir, capsys):
    assert main(["reparam", "--config", str(configs_dir / "euclidean.json"), "--set", "reparam.samples=4"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 5
    assert float(lines[1].split(",")[0]) == pytest.approx(1e-8)


def test_schema(capsys):
    assert main(["schema"]) == 0
    schema = json.loads(capsys.readouterr().out)
    assert "geometry" in schema["properties"]


def test_env_window_takes_precedence(configs_dir, monkeypatch, capsys):
    monkeypatch.setenv("CFWP_WINDOW", "1e-4,1e2")
    assert main(["check", "--config", str(configs_dir / "euclidean.json"), "--set", "window=[1e-6,1e3]"]) == 0
    assert json.loads(capsys.readouterr().out)["geometry"]["window"] == [1e-4, 1e2]


def test_config_window_overrides_default(configs_dir, capsys):
    assert main(["check", "--config", str(configs_dir / "euclidean.json"), "--set", "window=[1e-6,1e3]"]) == 0
    assert json.loads(capsys.readouterr().out)["geometry"]["window"] == [1e-6, 1e3]


def test_invalid_environment_and_arguments(configs_dir, monkeypatch):
    config = str(configs_dir / "euclidean.json")
    assert main(["check", "--config", config, "--jobs", "0"]) == 64
    assert main(["check", "--config", config, "--tol", "0.5"]) == 64
    assert main(["check", "--config", config, "--set", "nonsense"]) == 64
    monkeypatch.setenv("CFWP_WINDOW", "5,1")
    assert main(["check", "--config", config]) == 64


def test_apply_override_builds_nested_keys():
    doc = {"mode": {"k": 0}}
    apply_override(doc, "mode.lambda=2.5")
    apply_override(doc, "geometry.name=custom-run")
    assert doc == {"mode": {"k": 0, "lambda": 2.5}, "geometry": {"name": "custom-run"}}
    with pytest.raises(ConfigError):
        apply_override({"mode": 3}, "mode.k=1")

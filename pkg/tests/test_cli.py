import json

import numpy as np
import pytest

from ensfb.cli import main
from ensfb.errors import ValidationError
from ensfb.experiments import ExperimentConfig, find_config, parse_ensemble, run_preset


@pytest.fixture(autouse=True)
def _no_env_config(monkeypatch):
    monkeypatch.delenv("ENSFB_CONFIG_PATH", raising=False)


def run_json(capsys, *argv):
    assert main(list(argv)) == 0
    return json.loads(capsys.readouterr().out)


def test_list_presets(capsys):
    assert main(["list-presets"]) == 0
    names = [line.split("\t")[0] for line in capsys.readouterr().out.splitlines()]
    assert {"table1", "table2", "table3", "tables4-6", "fig10", "horizon"} <= set(names)


def test_analyze_json(capsys):
    doc = run_json(capsys, "analyze", "--model", "cyclic", "--ensemble", "list:-1000,-500,500,1000")
    row = doc["tables"]["verdicts"][0]
    assert row["kalman_controllable"] is True and row["N"] == 4


def test_synthesize_residual(capsys):
    doc = run_json(capsys, "synthesize", "--alpha", "0.1")
    assert doc["extra"]["ensemble"]["residual_max"] <= 1e-10
    gain = np.array(doc["extra"]["ensemble"]["gain"])
    prec = np.array(doc["extra"]["ensemble"]["precursor"])
    assert np.allclose(gain, -prec[1] / 0.1)  # oscillator input matrix is e_2


def test_bounds_csv(capsys):
    assert main(["bounds", "--format", "csv"]) == 0
    out = capsys.readouterr().out
    assert out.startswith("# certificates\nsigma,")
    assert ",true\n" in out


@pytest.mark.parametrize("argv", [
    ["synthesize", "--alpha", "-1"],
    ["analyze", "--model", "pendulum"],
    ["simulate", "--ensemble", "list:a,b"],
    ["simulate", "--x0", "1,2,3"],
    ["run-preset", "table99"],
])
def test_invalid_input_exits_2(argv, capsys):
    assert main(argv) == 2
    assert "invalid input" in capsys.readouterr().err


def test_usage_error_exits_2():
    with pytest.raises(SystemExit) as exc:
        main(["no-such-command"])
    assert exc.value.code == 2


def test_solver_failure_exits_3(capsys):
    code = main(["synthesize", "--model", "catenary-closed", "--ensemble", "list:0.5,1,2"])
    assert code == 3
    assert "solver failure" in capsys.readouterr().err


def test_out_directory_and_rerun_byte_identical(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run-preset", "table1", "--out", str(a), "--format", "csv"]) == 0
    assert main(["run-preset", "table1", "--out", str(b), "--format", "csv"]) == 0
    files = sorted(p.name for p in a.iterdir())
    assert "table1_metadata.json" in files and any(f.endswith(".csv") for f in files)
    for f in files:
        assert (a / f).read_bytes() == (b / f).read_bytes()


def test_config_file_and_flag_precedence(tmp_path, capsys, monkeypatch):
    cfg = tmp_path / "ensfb.json"
    cfg.write_text(json.dumps({"alpha": 0.5, "ensemble": "list:-1,1"}))
    doc = run_json(capsys, "synthesize", "--config", str(cfg))
    assert doc["metadata"]["config"]["alpha"] == 0.5
    doc = run_json(capsys, "synthesize", "--config", str(cfg), "--alpha", "0.2")
    assert doc["metadata"]["config"]["alpha"] == 0.2
    assert doc["metadata"]["config"]["ensemble"] == "list:-1,1"
    monkeypatch.setenv("ENSFB_CONFIG_PATH", str(tmp_path))
    assert find_config(None) == str(cfg)
    doc = run_json(capsys, "synthesize")
    assert doc["metadata"]["config"]["alpha"] == 0.5


def test_config_rejects_unknown_keys():
    with pytest.raises(ValidationError):
        ExperimentConfig.from_dict({"alpah": 0.1})


def test_parse_ensemble_forms():
    assert list(parse_ensemble("list:-1,0,2").values) == [-1.0, 0.0, 2.0]
    assert np.allclose(parse_ensemble("uniform:0:1:3").values, [0.0, 0.5, 1.0])
    assert list(parse_ensemble([1, 2]).values) == [1.0, 2.0]
    with pytest.raises(ValidationError):
        parse_ensemble("grid:1,2")


def test_preset_carries_assumptions():
    res = run_preset("table3")
    assert res.metadata["assumed"]

import csv
import json

import numpy as np
import pytest

from singmt.cli import COMMANDS, main, validate_config
from singmt.errors import SchemaError
from singmt.radial import moser_function

SMALL = {
    "disk-maximize": {"beta_factor": [0.5, 0.9]},
    "onofri-check": {"samples": 6, "alpha": [0.0, -0.5]},
    "cc-limit": {"beta_factor": [0.5, 0.9]},
    "rearrange-check": {"samples": 4},
    "lambda-q": {"q": [2.0, 4.0]},
    "torus-green": {"lambda": [0.0, 1.0]},
    "test-family": {"eps": [1e-2]},
    "supercritical": {"eps": [1e-2, 5e-3]},
    "threshold": {"lambda": [0.0]},
}


def _run(tmp_path, command, cfg=None, *extra):
    tmp_path.mkdir(parents=True, exist_ok=True)
    out = tmp_path / command
    args = [command, "--out", str(out), "--grid", "64"]
    if cfg is not None:
        path = tmp_path / f"{command}.json"
        path.write_text(json.dumps(cfg))
        args += ["--config", str(path)]
    return main(args + list(extra)), out


@pytest.mark.parametrize("command", COMMANDS)
def test_every_subcommand_runs(tmp_path, command):
    code, out = _run(tmp_path, command, SMALL[command])
    assert code == 0
    report = json.loads((out / "report.json").read_text())
    assert report["command"] == command and report["status"] == "ok"
    for key, val in SMALL[command].items():
        assert report["config"][key] == val
    rows = list(csv.reader((out / "table.csv").open()))
    assert rows[0] == report["columns"]
    assert len(rows) == len(report["rows"]) + 1 > 1


def test_table_is_deterministic(tmp_path):
    cfg = {"samples": 5, "seed": 3}
    _, a = _run(tmp_path / "a", "onofri-check", cfg)
    _, b = _run(tmp_path / "b", "onofri-check", cfg)
    assert (a / "table.csv").read_bytes() == (b / "table.csv").read_bytes()


def test_workers_do_not_change_results(tmp_path):
    _, a = _run(tmp_path / "a", "onofri-check", {"samples": 6})
    _, b = _run(tmp_path / "b", "onofri-check", {"samples": 6, "workers": 3})
    assert (a / "table.csv").read_bytes() == (b / "table.csv").read_bytes()


def test_violation_exit_code(tmp_path, capsys):
    code, out = _run(tmp_path, "onofri-check", {"samples": 4}, "--tolerance", "inequality_slack=-10")
    assert code == 2
    assert json.loads((out / "report.json").read_text())["status"] == "violation"
    assert "VIOLATION" in capsys.readouterr().err


@pytest.mark.parametrize("cfg,path", [
    ({"params": {"beta": "x"}}, "config.params.beta"),
    ({"eps": [0.5, 2.0]}, "config.eps[1]"),
    ({"weight": {"points": [[0, 0]], "orders": []}}, "config.weight"),
    ({"bogus": 1}, "config"),
])
def test_malformed_config_exit_one(tmp_path, capsys, cfg, path):
    code, _ = _run(tmp_path, "disk-maximize", cfg)
    assert code == 1
    err = capsys.readouterr().err
    assert path in err


def test_bad_json_and_tolerance_key(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["lambda-q", "--config", str(bad), "--out", str(tmp_path / "o")]) == 1
    assert main(["lambda-q", "--out", str(tmp_path / "o"), "--tolerance", "nope=1"]) == 1
    assert main(["lambda-q", "--out", str(tmp_path / "o"), "--tolerance", "residual"]) == 1
    assert "config error" in capsys.readouterr().err


def test_command_mismatch_rejected(tmp_path):
    assert _run(tmp_path, "lambda-q", {"command": "threshold"})[0] == 1


def test_missing_input_file():
    with pytest.raises(SchemaError) as exc:
        validate_config({"input": "/nonexistent/field.json"})
    assert exc.value.path == "config.input"


def test_input_field_radial(tmp_path):
    u = moser_function(0.1).scaled(0.5)
    path = tmp_path / "u.csv"
    u.to_csv(path)
    code, out = _run(tmp_path, "onofri-check", {"input": str(path), "alpha": [0.0]})
    assert code == 0
    rows = json.loads((out / "report.json").read_text())["rows"]
    assert len(rows) == 1 and rows[0][3] > 0


def test_emit_plot_data(tmp_path):
    code, out = _run(tmp_path, "cc-limit", {"beta_factor": [0.5, 0.9]}, "--emit-plot-data")
    assert code == 0
    dats, pngs = sorted(out.glob("*.dat")), sorted(out.glob("*.png"))
    assert dats and len(dats) == len(pngs)
    data = np.loadtxt(dats[0])
    assert data.ndim == 2 and data.shape[1] == 2
    assert pngs[0].read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_no_plots_without_flag(tmp_path):
    _, out = _run(tmp_path, "cc-limit", {"beta_factor": [0.5]})
    assert not list(out.glob("*.png"))

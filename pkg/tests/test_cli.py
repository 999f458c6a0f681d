import json
from pathlib import Path

import numpy as np
import pytest

from markov_ldp.cli import TASKS, describe, list_models, main, run, validate, ConfigError
from markov_ldp.io import dumps, verify_manifest
from markov_ldp.ldp import lambda_of
from markov_ldp.models import two_state


def _write(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg, indent=2))
    return p


BASE = {"model": {"name": "two_state", "params": {"p": 0.1, "q": 0.2}}, "functional": [0, 1], "seed": 1}


def test_empty_task_list(tmp_path):
    cfg = _write(tmp_path, {**BASE, "tasks": []})
    assert run(cfg, tmp_path / "out") == 0
    files = sorted(p.name for p in (tmp_path / "out").iterdir())
    assert files == ["manifest.json", "schema.json"]


def test_spectral_roundtrip(tmp_path):
    cfg = _write(tmp_path, {**BASE, "tasks": [{"type": "spectral", "alpha": 1.0}]})
    assert run(cfg, tmp_path / "out") == 0
    rec = json.loads((tmp_path / "out" / "00_spectral.json").read_text())
    lam = rec["result"]["lambda"]
    assert np.log(lam) == pytest.approx(lambda_of(two_state(0.1, 0.2), np.array([0.0, 1.0]), 1.0), rel=1e-14)


def test_tails_verdict(tmp_path):
    ok = {"type": "tails", "x": 1, "c": 0.7, "n": 400, "assert_ratio": [0.85, 1.15]}
    bad = {**ok, "assert_ratio": [0.99, 1.01]}
    assert run(_write(tmp_path, {**BASE, "tasks": [ok]}), tmp_path / "a") == 0
    assert run(_write(tmp_path, {**BASE, "tasks": [bad]}), tmp_path / "b") == 1
    rows = (tmp_path / "a" / "00_tails.csv").read_bytes().split(b"\r\n")
    assert rows[0] == b"n,c_n,predicted,exact,ratio,method"


def test_deterministic_artifacts(tmp_path):
    tasks = [
        {"type": "lambda_curve", "grid": {"lo": -1, "hi": 1, "points": 5}},
        {"type": "rate_point", "c": [0.5, 0.7]},
        {"type": "duality", "a": [0.5, -0.5]},
        {"type": "simulate", "x": 1, "c": 0.7, "n": 50, "reps": 2000, "assert_sigma": 4},
    ]
    cfg = _write(tmp_path, {**BASE, "tasks": tasks})
    assert run(cfg, tmp_path / "a") == 0
    assert run(cfg, tmp_path / "b", threads=2) == 0
    for f in (tmp_path / "a").iterdir():
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()
    assert verify_manifest(tmp_path / "a") == []
    (tmp_path / "a" / "01_rate_point.csv").write_text("tampered")
    assert verify_manifest(tmp_path / "a") == ["01_rate_point.csv"]


def test_seed_override_changes_simulation(tmp_path):
    cfg = _write(tmp_path, {**BASE, "tasks": [{"type": "simulate", "x": 1, "c": 0.6, "n": 30, "reps": 500}]})
    run(cfg, tmp_path / "a", seed=1)
    run(cfg, tmp_path / "b", seed=2)
    a = json.loads((tmp_path / "a" / "00_simulate.json").read_text())["result"]
    b = json.loads((tmp_path / "b" / "00_simulate.json").read_text())["result"]
    assert a["seed"] == 1 and b["seed"] == 2 and a["value"] != b["value"]


def test_drift_task_on_ou(tmp_path):
    cfg = {"model": {"name": "ou_grid", "params": {"delta": 0.5, "sigma": 1.0}},
           "tasks": [{"type": "drift", "kind": "DV3"}, {"type": "drift", "kind": "V3"}]}
    assert run(_write(tmp_path, cfg), tmp_path / "out") == 0


def test_parse_error_reports_line(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text('{\n  "model": {"name": "two_state"},\n  "tasks": [,]\n}')
    assert run(p, tmp_path / "out") == 2
    assert "bad.json:3:" in capsys.readouterr().err


def test_field_errors(tmp_path, capsys):
    cfg = {**BASE, "tasks": [{"type": "tails", "x": "one", "c": 0.7}, {"type": "warp"}]}
    assert run(_write(tmp_path, cfg), tmp_path / "out") == 2
    err = capsys.readouterr().err
    assert "tasks[0].x: expected an integer" in err
    assert "tasks[0].n: required parameter missing" in err
    assert "tasks[1].type: unknown task 'warp'" in err


def test_unknown_model(tmp_path, capsys):
    cfg = {"model": {"name": "nope"}, "tasks": []}
    assert run(_write(tmp_path, cfg), tmp_path / "out") == 2
    assert "model.name" in capsys.readouterr().err


def test_validate_fills_defaults():
    out = validate({"model": {"name": "two_state"}, "tasks": [{"type": "spectral"}]})
    assert out[0]["alpha"] == 1.0 and out[0]["mmet_N"] == 0


def test_list_and_describe(capsys):
    assert "two_state" in list_models()
    text = describe("lambda_curve")
    assert "grid" in text and "required" in text
    assert main(["describe", "nope"]) == 2
    assert main(["list-models"]) == 0
    assert set(TASKS) == {"spectral", "drift", "lambda_curve", "rate_point", "tails", "duality", "simulate"}


def test_json_floats_roundtrip():
    x = [0.1, 1 / 3, float("inf"), 2.0]
    assert json.loads(dumps(x)) == [0.1, 1 / 3, "inf", 2.0]

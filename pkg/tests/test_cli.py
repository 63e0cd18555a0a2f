import json
import subprocess
import sys

import pytest

from qorkd.cli import main

from helpers import FIXTURES, perfect_fixture

GOLDEN = FIXTURES / "golden" / "pipeline_metrics.json"
PIPE_SPEC = {"n_designs": 40, "min_nodes": 4, "max_nodes": 12, "embed_dim": 8, "seed": 11}


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def _err(err):
    lines = err.strip().splitlines()
    assert len(lines) == 1
    return json.loads(lines[0])


def test_usage_errors_exit_one(capsys, tmp_path):
    code, _, err = run(capsys)
    assert code == 1 and _err(err)["error"] == "usage"
    code, _, err = run(capsys, "train-student", tmp_path, tmp_path / "s.qdck")
    assert code == 1 and "--teacher" in _err(err)["message"]
    code, _, err = run(capsys, "train-baseline", "ast_gnn_kd", tmp_path, tmp_path / "b.qdck")
    assert code == 1 and _err(err)["error"] == "usage"
    code, _, err = run(capsys, "train-teacher", tmp_path, tmp_path / "t.qdck", "--batch-size", 1)
    assert code == 1


def test_data_errors_exit_two(capsys, tmp_path):
    code, _, err = run(capsys, "evaluate", tmp_path / "missing.qdck", tmp_path)
    assert code == 2 and _err(err)["error"] == "data"
    (tmp_path / "bad.v").write_text("module m(input a, output b);\n  assign b = c;\nendmodule\n")
    code, _, err = run(capsys, "parse", tmp_path / "bad.v")
    assert code == 2 and _err(err)["error"] == "semantic"


def test_parse_prints_features(capsys, tmp_path):
    src = FIXTURES / "features" / "f01_inv.v"
    code, out, _ = run(capsys, "parse", src, "--features-out", tmp_path / "f.csv",
                       "--ast-out", tmp_path / "a.jsonl")
    rec = json.loads(out)
    assert code == 0 and rec["design_id"] == "f01_inv" and len(rec["features"]) == 108
    assert (tmp_path / "f.csv").exists() and (tmp_path / "a.jsonl").exists()


def test_evaluate_perfect_checkpoint(capsys, tmp_path):
    perfect_fixture(tmp_path)
    code, out, _ = run(capsys, "evaluate", tmp_path / "perfect.qdck", tmp_path,
                       "--report-out", tmp_path / "r.json", "--per-design-out", tmp_path / "p.csv")
    assert code == 0
    rep = json.loads(out)
    assert abs(rep["r2"] - 1.0) <= 1e-12 and rep["mae"] <= 1e-12
    assert "config" in json.loads((tmp_path / "r.json").read_text())


def test_config_file_and_flag_precedence(capsys, tiny_dir, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"max_epochs": 2, "batch_size": 16, "seed": 3, "optimizer": "adam"}))
    code, out, _ = run(capsys, "train-teacher", tiny_dir, tmp_path / "t.qdck", "--config", cfg,
                       "--max-epochs", 1)
    used = json.loads(out)["config"]
    assert code == 0 and used["max_epochs"] == 1 and used["optimizer"] == "adam" and used["seed"] == 3
    cfg.write_text(json.dumps({"epochs": 2}))
    code, _, err = run(capsys, "train-teacher", tiny_dir, tmp_path / "t.qdck", "--config", cfg)
    assert code == 1 and _err(err)["error"] == "usage"


def _pipeline(capsys, d):
    (d / "spec.json").write_text(json.dumps(PIPE_SPEC))
    assert run(capsys, "synth-data", d / "spec.json", d / "data")[0] == 0
    common = ("--max-epochs", 3, "--batch-size", 16, "--seed", 0)
    assert run(capsys, "train-teacher", d / "data", d / "t.qdck", "--optimizer", "momentum", *common)[0] == 0
    assert run(capsys, "train-student", d / "data", d / "s.qdck", "--teacher", d / "t.qdck", *common)[0] == 0
    metrics = {}
    for name in ("t", "s"):
        code, out, _ = run(capsys, "evaluate", d / f"{name}.qdck", d / "data")
        assert code == 0
        metrics[name] = json.loads(out)
    return metrics


def test_pipeline_matches_golden_metrics(capsys, tmp_path):
    got = _pipeline(capsys, tmp_path)
    want = json.loads(GOLDEN.read_text())
    assert set(got) == set(want)
    for name in want:
        for k, v in want[name].items():
            if isinstance(v, float):
                assert got[name][k] == pytest.approx(v, rel=1e-9, abs=1e-12), (name, k)
            else:
                assert got[name][k] == v, (name, k)


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "qorkd.cli", "evaluate", str(tmp_path / "x"), str(tmp_path)],
                       capture_output=True, text=True)
    assert r.returncode == 2 and json.loads(r.stderr)["error"] == "data"

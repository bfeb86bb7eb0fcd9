import io
import json
import subprocess
import sys

import numpy as np
import psutil
import pytest

from mimil.cli import infer_stream, main, process_stream_line
from mimil.models import load_model

SMALL = {"n_cws": 7, "n_cwns": 7, "windows_per_participant": 3, "baseline_windows": 2,
         "write_recordings": True}
FAST = {"epochs": 3, "seeds": [0]}


def _write(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = _write(root / "synth.json", SMALL)
    assert main(["generate", "--config", cfg, "--out", str(root / "ds")]) == 0
    assert main(["train", "--bags", str(root / "ds" / "bags_raw.jsonl"), "--config",
                 _write(root / "train.json", FAST), "--out", str(root / "runs")]) == 0
    run = next((root / "runs").glob("mimil-raw-*"))
    return root, root / "ds", run


def _lines(path):
    return [json.loads(l) for l in open(path) if l.strip()]


def test_generate_default_config(tmp_path, capsys):
    assert main(["generate", "--out", str(tmp_path / "d")]) == 0
    manifest = tmp_path / "d" / "dataset.json"
    assert capsys.readouterr().out.strip() == str(manifest)
    doc = json.loads(manifest.read_text())
    assert len(doc["groups"]) == 40
    assert len(_lines(tmp_path / "d" / "bags_raw.jsonl")) == 800


def test_malformed_config_names_the_key(tmp_path, capsys):
    assert main(["generate", "--config", _write(tmp_path / "c.json", {"n_cws": 7, "n_cwz": 7})]) == 2
    assert "n_cwz" in capsys.readouterr().err
    (tmp_path / "broken.json").write_text('{"n_cws": 7,\n "n_cwns": }')
    assert main(["generate", "--config", str(tmp_path / "broken.json")]) == 2
    assert "line 2" in capsys.readouterr().err


def test_seed_override_changes_dataset(tmp_path, capsys):
    cfg = _write(tmp_path / "s.json", {**SMALL, "write_recordings": False, "feature_modes": ["raw"]})
    main(["generate", "--config", cfg, "--out", str(tmp_path / "a")])
    main(["generate", "--config", cfg, "--seed", "9", "--out", str(tmp_path / "b")])
    main(["generate", "--config", cfg, "--seed", "9", "--out", str(tmp_path / "c")])
    a, b, c = ((tmp_path / x / "bags_raw.jsonl").read_bytes() for x in "abc")
    assert a != b and b == c


@pytest.mark.parametrize("mode,cols", [("raw", 24), ("change", 8), ("delta", 24)])
def test_featurize_columns(workspace, tmp_path, mode, cols):
    _, ds, _ = workspace
    out = tmp_path / f"{mode}.jsonl"
    assert main(["featurize", "--manifest", str(ds / "manifest.json"), "--feature-mode", mode,
                 "--out", str(out)]) == 0
    bags = _lines(out)
    assert len(bags) == 14 * 3
    assert (bags[0]["n_rows"], bags[0]["n_cols"]) == (19, cols)
    assert len(bags[0]["matrix"]) == 19 * cols


def test_train_then_evaluate_reproduces(workspace, capsys):
    _, ds, run = workspace
    assert main(["evaluate", "--run", str(run), "--bags", str(ds / "bags_raw.jsonl")]) == 0
    ev = json.loads((run / "evaluation.json").read_text())
    assert ev["matches_training_report"] is True
    assert json.loads((run / "config.json").read_text())["train"]["epochs"] == 3


@pytest.mark.parametrize("mode,shape", [("grouped", [19, 4]), ("full", [19, 24])])
def test_explain_modes(workspace, tmp_path, capsys, mode, shape):
    _, ds, run = workspace
    args = ["explain", "--run", str(run), "--bags", str(ds / "bags_raw.jsonl"), "--mode", mode,
            "--windows", "2", "--out", str(tmp_path)]
    if mode == "full":
        args += ["--n-coalitions", "1024"]
    assert main(args) == 0
    out = next(tmp_path.glob("explain-*"))
    rows = _lines(out / "explanations.jsonl")
    assert len(rows) == 2 and len(rows[0]["phi"]) == shape[0] * shape[1]


def test_rank_prints_24_sorted_rows(workspace, capsys):
    _, ds, _ = workspace
    assert main(["rank", "--bags", str(ds / "bags_raw.jsonl")]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0].split() == ["Rank", "Feature", "name", "Coefficient"]
    assert len(lines) == 25
    coefs = [float(l.split()[-1]) for l in lines[1:]]
    assert np.all(np.diff(np.abs(coefs)) <= 1e-12) or np.all(np.diff(coefs) <= 1e-12)


def test_bench_reports_both_timings(workspace, capsys):
    _, ds, run = workspace
    assert main(["bench", "--model", str(run / "seed0.miml"), "--bags", str(ds / "bags_raw.jsonl"),
                 "--manifest", str(ds / "manifest.json"), "--n-iters", "50"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["model_only"]["p95_s"] >= rep["model_only"]["mean_s"]
    assert rep["with_features"]["mean_s"] > rep["model_only"]["mean_s"]


def _stream_lines(ds, n):
    bags = _lines(ds / "bags_raw.jsonl")
    return [json.dumps({"window_id": b["window_id"], "feature_mode": "raw", "matrix": b["matrix"]})
            for b in (bags * (n // len(bags) + 1))[:n]]


def test_stream_subprocess_contract(workspace):
    _, ds, run = workspace
    lines = _stream_lines(ds, 3)
    lines.insert(1, "{not json")
    lines.insert(2, json.dumps({"window_id": "w-bad", "feature_mode": "raw", "matrix": [[1.0]]}))
    proc = subprocess.run([sys.executable, "-m", "mimil.cli", "stream", "--model", str(run / "seed0.miml")],
                          input="\n".join(lines) + "\n", capture_output=True, text=True, timeout=120)
    assert proc.returncode == 0, proc.stderr
    out = [json.loads(l) for l in proc.stdout.splitlines()]
    assert len(out) == 5
    assert "error" in out[1] and out[2]["window_id"] == "w-bad" and "error" in out[2]
    for rec in (out[0], out[3], out[4]):
        assert 0 < rec["probability"] < 1
        assert len(rec["attention"]) == 4
        for weights in rec["attention"].values():
            assert len(weights) == 19 and abs(sum(weights) - 1) <= 1e-6


def test_stream_unloadable_model(tmp_path):
    bad = tmp_path / "bad.miml"
    bad.write_bytes(b"not a model")
    proc = subprocess.run([sys.executable, "-m", "mimil.cli", "stream", "--model", str(bad)],
                          input="", capture_output=True, text=True, timeout=60)
    assert proc.returncode != 0 and "cannot load model" in proc.stderr


def test_stream_latency(workspace):
    _, ds, run = workspace
    model = load_model(run / "seed0.miml")
    # ten minutes at one window per 15 s
    out = [process_stream_line(l, model) for l in _stream_lines(ds, 40)]
    assert np.mean([r["latency_s"] for r in out]) < 0.020


def test_stream_memory_is_bounded(workspace):
    _, ds, run = workspace
    model = load_model(run / "seed0.miml")
    lines = _stream_lines(ds, 42)
    proc = psutil.Process()

    class Sink(io.TextIOBase):
        def write(self, s):
            return len(s)

    infer_stream(model, lines * 10, Sink())
    before = proc.memory_info().rss
    infer_stream(model, (lines[i % len(lines)] for i in range(5_000)), Sink())
    assert proc.memory_info().rss - before < 10 * 2**20

import csv
import hashlib
import json

import numba
import numpy as np
import pytest

from hysterlab import _kernels
from hysterlab.cli import ExperimentManifest, UsageError, main
from hysterlab.signals import load_csv


def run(*argv):
    return main([str(a) for a in argv])


def digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def generate(ws):
    assert run("generate", "--spec", ws / "spec.json", "--signal", ws / "signal.json", "--out", ws / "data.csv") == 0
    return ws / "data.csv"


def train(ws, *extra):
    assert run("train", "--manifest", ws / "manifest.json", *extra) == 0
    return ws / "run"


def test_generate_is_deterministic(workspace):
    first = digest(generate(workspace))
    assert digest(generate(workspace)) == first
    s = load_csv(workspace / "data.csv")
    assert len(s) == 121 and s.y is not None and s.xdot is None
    assert (workspace / "data.csv").read_text().startswith("# hysterlab ")


def test_generate_with_rate_column(workspace):
    out = workspace / "rate.csv"
    assert run("generate", "--spec", workspace / "spec.json", "--signal", workspace / "signal.json", "--out", out, "--xdot") == 0
    assert load_csv(out).xdot is not None


def test_generate_wide_frequency_sweep(workspace):
    sig = workspace / "sweep.json"
    sig.write_text(json.dumps({"kind": "multisine", "frequencies": [0.5, 3, 30, 300], "cycles": 2, "points_per_cycle": 50}))
    out = workspace / "sweep.csv"
    assert run("generate", "--spec", workspace / "spec.json", "--signal", sig, "--out", out) == 0
    s = load_csv(out)
    assert len(s) >= 4 * 2 * 50
    assert np.all(np.diff(s.t) > 0)


@pytest.mark.parametrize(
    "doc",
    [
        {"kind": "sine", "amplitude": 1.0, "frequency": 1.0, "duration": 0, "sample_rate": 10},
        {"kind": "sawtooth"},
        {"kind": "sine", "frequency": -1.0, "duration": 1, "sample_rate": 10},
    ],
)
def test_generate_bad_descriptor(workspace, doc, capsys):
    (workspace / "signal.json").write_text(json.dumps(doc))
    assert run("generate", "--spec", workspace / "spec.json", "--signal", workspace / "signal.json", "--out", workspace / "d.csv") == 2
    assert "error" in capsys.readouterr().err
    assert not (workspace / "d.csv").exists()


def test_generate_bad_spec_names_field(workspace, capsys):
    (workspace / "spec.json").write_text(json.dumps({"model": "pi", "thresholds": [0.1], "weights": "x"}))
    assert run("generate", "--spec", workspace / "spec.json", "--signal", workspace / "signal.json", "--out", workspace / "d.csv") == 2
    assert "weights" in capsys.readouterr().err


def test_train_is_byte_reproducible(workspace):
    generate(workspace)
    out = train(workspace)
    model, trace = digest(out / "model.json"), digest(out / "trace.csv")
    train(workspace)
    assert digest(out / "model.json") == model
    assert digest(out / "trace.csv") == trace


def test_train_artifacts_embed_provenance(workspace):
    generate(workspace)
    out = train(workspace)
    doc = json.loads((out / "model.json").read_text())
    report = json.loads((out / "report.json").read_text())
    assert doc["meta"]["seed"] == 42 and report["seed"] == 42
    assert doc["meta"]["config_hash"] == report["config_hash"]
    assert doc["tool_version"] == report["tool_version"]
    header = (out / "trace.csv").read_text().splitlines()[:2]
    assert header[0] == f"# hysterlab {report['tool_version']} seed=42 config={report['config_hash']}"
    assert header[1] == "epoch,phase,mse"
    text = (out / "report.txt").read_text()
    assert "train MSE" in text and "test MSE" in text and "parameters: inner=" in text
    assert report["weight_parameters"] == 3 * 2 + 2 * (3 + 2 + 1)


def test_train_seed_override(workspace):
    generate(workspace)
    out = train(workspace, "--seed", 7, "--out", workspace / "other")
    assert json.loads((workspace / "other" / "model.json").read_text())["meta"]["seed"] == 7
    assert out.exists() is False


def test_train_missing_dataset(workspace, capsys):
    assert run("train", "--manifest", workspace / "manifest.json") == 2
    assert str(workspace / "data.csv") in capsys.readouterr().err


def test_train_negative_seed(workspace):
    generate(workspace)
    assert run("train", "--manifest", workspace / "manifest.json", "--seed", -1) == 2


@pytest.mark.parametrize(
    "patch",
    [{"surprise": 1}, {"arch": {"n_stop": 0, "n_tanh": 2}}, {"mode": "anneal"}, {"seed": "x"}, {"config": "nope.json"}],
)
def test_manifest_errors(workspace, patch):
    doc = json.loads((workspace / "manifest.json").read_text())
    doc.update(patch)
    (workspace / "manifest.json").write_text(json.dumps(doc))
    with pytest.raises(UsageError):
        ExperimentManifest.load(workspace / "manifest.json")


def test_manifest_concatenates_datasets(workspace):
    generate(workspace)
    doc = json.loads((workspace / "manifest.json").read_text())
    doc["dataset"] = ["data.csv", "data.csv"]
    (workspace / "manifest.json").write_text(json.dumps(doc))
    out = train(workspace)
    report = json.loads((out / "report.json").read_text())
    assert report["samples"]["train"] + report["samples"]["test"] == 242


def test_simulate_reproduces_train_mse(workspace):
    data = generate(workspace)
    out = train(workspace)
    report = json.loads((out / "report.json").read_text())
    k = report["samples"]["train"]
    pred_path = workspace / "pred.csv"
    assert run("simulate", "--model", out / "model.json", "--input", data, "--out", pred_path) == 0
    rows = [r for r in csv.reader(l for l in pred_path.open() if not l.startswith("#"))]
    assert rows[0] == ["t", "x", "y_pred"]
    pred = np.array([float(r[2]) for r in rows[1:]])
    y = load_csv(data).y
    assert abs(np.mean((pred[:k] - y[:k]) ** 2) - report["train_mse"]) <= 1e-12
    assert abs(np.mean((pred[k:] - y[k:]) ** 2) - report["test_mse"]) <= 1e-12


def test_simulate_loop_export(workspace):
    data = generate(workspace)
    out = train(workspace)
    loop = workspace / "loop.csv"
    assert run("simulate", "--model", out / "model.json", "--input", data, "--out", loop, "--loop") == 0
    rows = [r for r in csv.reader(l for l in loop.open() if not l.startswith("#"))]
    assert rows[0] == ["x", "y_pred"]
    assert len(rows) - 1 == len(load_csv(data))
    np.testing.assert_array_equal([float(r[0]) for r in rows[1:]], load_csv(data).x)


def test_simulate_empty_input(workspace, capsys):
    generate(workspace)
    out = train(workspace)
    (workspace / "empty.csv").write_text("t,x\n")
    assert run("simulate", "--model", out / "model.json", "--input", workspace / "empty.csv", "--out", workspace / "p.csv") == 2
    assert "error" in capsys.readouterr().err


def test_simulate_version_mismatch(workspace):
    generate(workspace)
    out = train(workspace)
    doc = json.loads((out / "model.json").read_text())
    doc["format_version"] = 999
    (out / "model.json").write_text(json.dumps(doc))
    assert run("simulate", "--model", out / "model.json", "--input", workspace / "data.csv", "--out", workspace / "p.csv") == 2


def read_metrics(path):
    rows = list(csv.DictReader(l for l in path.open() if not l.startswith("#")))
    return {r["split"]: r for r in rows}


def test_evaluate_matches_train_report(workspace):
    data = generate(workspace)
    out = train(workspace)
    report = json.loads((out / "report.json").read_text())
    assert run("evaluate", "--model", out / "model.json", "--data", data, "--split", 0.8, "--out", workspace / "ev") == 0
    path = workspace / "ev" / "metrics.csv"
    header = [l for l in path.read_text().splitlines() if not l.startswith("#")][0]
    assert header == "split,samples,mse,max_relative_error"
    m = read_metrics(path)
    assert set(m) == {"all", "train", "test"}
    assert abs(float(m["train"]["mse"]) - report["train_mse"]) <= 1e-12
    assert abs(float(m["test"]["mse"]) - report["test_mse"]) <= 1e-12
    assert abs(float(m["test"]["max_relative_error"]) - report["test_max_relative_error"]) <= 1e-12
    assert int(m["train"]["samples"]) + int(m["test"]["samples"]) == int(m["all"]["samples"])


def test_evaluate_missing_y(workspace, capsys):
    data = generate(workspace)
    out = train(workspace)
    s = load_csv(data)
    (workspace / "nolabel.csv").write_text("t,x\n" + "".join(f"{float(a)!r},{float(b)!r}\n" for a, b in zip(s.t, s.x)))
    assert run("evaluate", "--model", out / "model.json", "--data", workspace / "nolabel.csv") == 2
    assert "'y'" in capsys.readouterr().err


def test_threads_env_is_honoured(monkeypatch):
    monkeypatch.setenv("HYSTERLAB_THREADS", "1")
    assert _kernels.configure_threads() == 1
    assert numba.get_num_threads() == 1


def test_threads_env_rejects_garbage(workspace, monkeypatch, capsys):
    monkeypatch.setenv("HYSTERLAB_THREADS", "many")
    assert run("train", "--manifest", workspace / "manifest.json") == 2
    assert "HYSTERLAB_THREADS" in capsys.readouterr().err


def test_usage_errors():
    assert main([]) == 2
    assert main(["frobnicate"]) == 2
    assert main(["--version"]) == 0

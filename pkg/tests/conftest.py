import json

import pytest

from hysterlab.refmodels import default_gpnn_spec, spec_to_dict

SMALL_CONFIG = {
    "ga": {"population": 10, "generations": 12, "seed": 0},
    "sgd": {"max_iterations": 6},
    "switch": {"window": 4},
}


def write_workspace(root, config=SMALL_CONFIG, seed=42, split=0.8):
    """Spec, excitation, training config and manifest for a quick CLI run."""
    root.mkdir(parents=True, exist_ok=True)
    (root / "spec.json").write_text(json.dumps(spec_to_dict(default_gpnn_spec())))
    (root / "signal.json").write_text(
        json.dumps({"kind": "damped-triangle", "amplitude": 1.0, "frequency": 1.0, "duration": 3, "sample_rate": 40})
    )
    (root / "config.json").write_text(json.dumps(config))
    manifest = {
        "dataset": "data.csv",
        "arch": {"n_stop": 3, "n_tanh": 2, "rate_input": False},
        "config": "config.json",
        "seed": seed,
        "output_dir": "run",
        "split": split,
    }
    (root / "manifest.json").write_text(json.dumps(manifest))
    return root


@pytest.fixture
def workspace(tmp_path):
    return write_workspace(tmp_path)


_CRITERIA = {}


@pytest.fixture
def criterion():
    """Record (and print) one PASS/FAIL line for an acceptance criterion."""

    def record(number, title, ok, detail=""):
        line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}" + (f"  [{detail}]" if detail else "")
        _CRITERIA[number] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[n])

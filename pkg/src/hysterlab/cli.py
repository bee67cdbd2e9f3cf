"""Command-line front end: ``hysterlab {generate,train,simulate,evaluate}``.

Exit codes: 0 success (including non-converged training, reported in the
status field), 1 numeric failure, 2 usage or file errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .epnn import Architecture, Model, inner_size, load_model, save_model, weight_parameter_count
from .refmodels import RDPISpec, SpecError, load_spec, simulate
from .signals import (
    TimeSeriesPair,
    concatenate,
    estimate_rate,
    load_csv,
    make_signal,
    normalize,
    save_csv,
    split,
)
from .training import ConfigError, TrainingConfig, evaluate, hybrid_train, load_config

EXIT_OK, EXIT_NUMERIC, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    """Bad arguments, missing files or malformed inputs (exit code 2)."""


def _read_json(path: Path, what: str):
    if not path.is_file():
        raise UsageError(f"{what} not found: {path}")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None


def _load_series(path: Path, what: str = "dataset") -> TimeSeriesPair:
    if not path.is_file():
        raise UsageError(f"{what} not found: {path}")
    try:
        return load_csv(path)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _provenance(seed, config_hash) -> str:
    return f"hysterlab {__version__} seed={seed} config={config_hash}"


# --- manifest ------------------------------------------------------------------------


_MANIFEST_KEYS = {"dataset", "arch", "config", "seed", "output_dir", "split", "mode", "compare_with"}


@dataclass(frozen=True)
class ExperimentManifest:
    """One training experiment. Relative paths resolve against the manifest's directory.

    JSON keys: ``dataset`` (path or list of paths, concatenated in order),
    ``arch`` ({n_stop, n_tanh, rate_input}), ``config`` (optional path to a
    training config), ``seed``, ``output_dir``, ``split`` (train fraction,
    default 0.8), ``mode`` (hybrid | ga | sgd) and ``compare_with`` (optional
    path to a companion run's ``report.json``).
    """

    datasets: tuple
    arch: Architecture
    config: TrainingConfig
    seed: int
    output_dir: Path
    split: float = 0.8
    mode: str = "hybrid"
    compare_with: Optional[Path] = None

    @classmethod
    def load(cls, path) -> "ExperimentManifest":
        path = Path(path)
        d = _read_json(path, "manifest")
        if not isinstance(d, dict):
            raise UsageError(f"{path}: manifest must be a JSON object")
        unknown = sorted(set(d) - _MANIFEST_KEYS)
        if unknown:
            raise UsageError(f"{path}: unknown manifest key '{unknown[0]}'")
        base = path.parent
        for key in ("dataset", "arch", "output_dir"):
            if key not in d:
                raise UsageError(f"{path}: manifest.{key} is required")
        ds = d["dataset"] if isinstance(d["dataset"], list) else [d["dataset"]]
        datasets = tuple(base / p for p in ds)
        try:
            arch = Architecture.from_dict(d["arch"])
        except (KeyError, TypeError, ValueError) as exc:
            raise UsageError(f"{path}: manifest.arch: {exc}") from None
        config = TrainingConfig()
        if d.get("config") is not None:
            cpath = base / d["config"]
            if not cpath.is_file():
                raise UsageError(f"training config not found: {cpath}")
            try:
                config = load_config(cpath)
            except ConfigError as exc:
                raise UsageError(f"{cpath}: {exc}") from None
        seed = d.get("seed", config.ga.seed)
        if not isinstance(seed, int) or seed < 0:
            raise UsageError(f"{path}: manifest.seed must be a non-negative integer")
        mode = d.get("mode", "hybrid")
        if mode not in ("hybrid", "ga", "sgd"):
            raise UsageError(f"{path}: manifest.mode must be hybrid, ga or sgd")
        compare = d.get("compare_with")
        return cls(
            datasets=datasets,
            arch=arch,
            config=config,
            seed=seed,
            output_dir=base / d["output_dir"],
            split=float(d.get("split", 0.8)),
            mode=mode,
            compare_with=base / compare if compare else None,
        )


# --- subcommands ------------------------------------------------------------------------


def cmd_generate(args) -> int:
    try:
        spec = load_spec(args.spec) if Path(args.spec).is_file() else None
    except SpecError as exc:
        raise UsageError(f"{args.spec}: {exc}") from None
    if spec is None:
        raise UsageError(f"spec not found: {args.spec}")
    descriptor = _read_json(Path(args.signal), "signal descriptor")
    if not isinstance(descriptor, dict):
        raise UsageError(f"{args.signal}: signal descriptor must be a JSON object")
    try:
        series = make_signal(descriptor, base_dir=Path(args.signal).parent)
    except (KeyError, ValueError) as exc:
        raise UsageError(f"{args.signal}: {exc}") from None
    with_rate = args.xdot or isinstance(spec, RDPISpec)
    if with_rate:
        series = estimate_rate(series)
    y = simulate(spec, series)
    if not np.all(np.isfinite(y)):
        print("error: reference model produced non-finite output", file=sys.stderr)
        return EXIT_NUMERIC
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_csv(series.with_output(y), out, include_xdot=with_rate, comments=(f"hysterlab {__version__}",))
    print(f"wrote {len(series)} samples to {out}")
    return EXIT_OK


def _prepare(manifest: ExperimentManifest):
    parts = [_load_series(p) for p in manifest.datasets]
    series = parts[0] if len(parts) == 1 else concatenate(parts)
    if series.y is None:
        raise UsageError(f"{manifest.datasets[0]}: training data needs a 'y' column")
    if series.xdot is None:
        series = estimate_rate(series)
    try:
        train_raw, _ = split(series, manifest.split)
    except ValueError as exc:
        raise UsageError(f"manifest.split: {exc}") from None
    return series, train_raw


def cmd_train(args) -> int:
    manifest = ExperimentManifest.load(args.manifest)
    seed = manifest.seed if args.seed is None else args.seed
    out_dir = Path(args.out) if args.out else manifest.output_dir
    config = manifest.config.with_seed(seed)
    series, train_raw = _prepare(manifest)
    k = len(train_raw)
    train_norm, maps = normalize(train_raw)

    t0 = time.perf_counter()
    try:
        params, trace = hybrid_train(manifest.arch, train_norm, config, mode=manifest.mode)
    except (ValueError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"error: training failed: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    elapsed = time.perf_counter() - t0

    train_m = evaluate(params, manifest.arch, train_raw, maps)
    test_m = evaluate(params, manifest.arch, series, maps, start=k)
    # normalized-unit MSEs, the scale used for comparisons across datasets
    ygain = maps["y"].gain
    train_mse_n = train_m["mse"] / ygain**2
    test_mse_n = test_m["mse"] / ygain**2
    if not (math.isfinite(train_mse_n) and math.isfinite(test_mse_n)):
        print("error: trained model produced non-finite predictions", file=sys.stderr)
        return EXIT_NUMERIC

    config_hash = config.digest()
    report = {
        "tool_version": __version__,
        "seed": seed,
        "config_hash": config_hash,
        "mode": manifest.mode,
        "status": trace.status,
        "epochs": trace.phase_lengths(),
        "samples": {"train": k, "test": len(series) - k},
        "train_mse": train_m["mse"],
        "test_mse": test_m["mse"],
        "train_mse_normalized": train_mse_n,
        "test_mse_normalized": test_mse_n,
        "train_max_relative_error": train_m["max_relative_error"],
        "test_max_relative_error": test_m["max_relative_error"],
        "inner_parameters": inner_size(manifest.arch),
        "weight_parameters": weight_parameter_count(manifest.arch),
        "output_weights": manifest.arch.n_tanh + 1,
    }
    if manifest.compare_with is not None:
        other = _read_json(manifest.compare_with, "companion report")
        ratio = test_mse_n / other["test_mse_normalized"] if other["test_mse_normalized"] > 0 else math.inf
        report["companion_test_mse_ratio"] = ratio
        report["companion_ratio_at_least_100"] = bool(ratio >= 100.0)

    out_dir.mkdir(parents=True, exist_ok=True)
    meta = {
        "seed": seed,
        "config_hash": config_hash,
        "config": config.to_dict(),
        "mode": manifest.mode,
        "split": manifest.split,
        "status": trace.status,
        "train_mse": train_m["mse"],
        "test_mse": test_m["mse"],
    }
    save_model(out_dir / "model.json", Model(manifest.arch, params, maps, meta))
    (out_dir / "trace.csv").write_text(f"# {_provenance(seed, config_hash)}\n" + trace.to_csv(), encoding="utf-8")
    (out_dir / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    (out_dir / "report.txt").write_text(_report_text(report), encoding="utf-8")
    print(_report_text(report), end="")
    print(f"training time: {elapsed:.1f} s")
    return EXIT_OK


def _report_text(r: dict) -> str:
    lines = [
        _provenance(r["seed"], r["config_hash"]),
        f"mode: {r['mode']}",
        f"status: {r['status']}",
        "epochs: " + ", ".join(f"{k}={v}" for k, v in r["epochs"].items()),
        f"samples: train={r['samples']['train']} test={r['samples']['test']}",
        f"train MSE: {r['train_mse']:.6e} (normalized {r['train_mse_normalized']:.6e})",
        f"test MSE: {r['test_mse']:.6e} (normalized {r['test_mse_normalized']:.6e})",
        f"train max relative error: {r['train_max_relative_error']:.6e}",
        f"test max relative error: {r['test_max_relative_error']:.6e}",
        f"parameters: inner={r['inner_parameters']} weights={r['weight_parameters']} output={r['output_weights']}",
    ]
    if "companion_test_mse_ratio" in r:
        flag = "yes" if r["companion_ratio_at_least_100"] else "no"
        lines.append(f"test MSE ratio vs companion: {r['companion_test_mse_ratio']:.6e} (>= 100x: {flag})")
    return "\n".join(lines) + "\n"


def _load_model(path) -> Model:
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"model not found: {path}")
    try:
        return load_model(path)
    except (KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"{path}: {exc}") from None


def _header(model: Model) -> str:
    return _provenance(model.meta.get("seed"), model.meta.get("config_hash"))


def cmd_simulate(args) -> int:
    model = _load_model(args.model)
    series = _load_series(Path(args.input), "input")
    from .epnn import simulate_denormalized

    pred = simulate_denormalized(model.params, model.arch, series, model.scale_maps)
    if not np.all(np.isfinite(pred)):
        print("error: simulation produced non-finite output", file=sys.stderr)
        return EXIT_NUMERIC
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    header, cols = (["x", "y_pred"], [series.x, pred]) if args.loop else (["t", "x", "y_pred"], [series.t, series.x, pred])
    with out.open("w", newline="", encoding="utf-8") as fh:
        fh.write(f"# {_header(model)}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in zip(*cols):
            w.writerow([repr(float(v)) for v in row])
    print(f"wrote {len(series)} rows to {out}")
    return EXIT_OK


METRIC_COLUMNS = ("split", "samples", "mse", "max_relative_error")


def cmd_evaluate(args) -> int:
    """Metrics CSV columns: split (all | train | test), samples, mse, max_relative_error.

    With ``--split F`` the first fraction F of the record is scored as ``train``
    and the remainder, simulated as a continuation, as ``test``.
    """
    model = _load_model(args.model)
    series = _load_series(Path(args.data), "data")
    if series.y is None:
        raise UsageError(f"{args.data}: evaluation needs a 'y' column")
    rows = [("all", 0, len(series))]
    if args.split is not None:
        try:
            train, _ = split(series, args.split)
        except ValueError as exc:
            raise UsageError(f"--split: {exc}") from None
        k = len(train)
        rows += [("train", 0, k), ("test", k, len(series))]
    results = []
    for name, a, b in rows:
        part = series if b == len(series) else split(series, b / len(series))[0]
        m = evaluate(model.params, model.arch, part, model.scale_maps, start=a)
        results.append((name, b - a, m["mse"], m["max_relative_error"]))
    if not all(math.isfinite(v) for r in results for v in r[2:]):
        print("error: evaluation produced non-finite metrics", file=sys.stderr)
        return EXIT_NUMERIC
    for name, n, e, rel in results:
        print(f"{name}: samples={n} mse={e:.6e} max_relative_error={rel:.6e}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with (out / "metrics.csv").open("w", newline="", encoding="utf-8") as fh:
            fh.write(f"# {_header(model)}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(METRIC_COLUMNS)
            for name, n, e, rel in results:
                w.writerow([name, n, repr(e), repr(rel)])
    return EXIT_OK


# --- entry point -----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hysterlab", description="Hysteresis identification toolkit.")
    p.add_argument("--version", action="version", version=f"hysterlab {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="simulate a reference model on a synthetic excitation")
    g.add_argument("--spec", required=True, help="reference model JSON")
    g.add_argument("--signal", required=True, help="excitation descriptor JSON")
    g.add_argument("--out", required=True, help="output CSV path")
    g.add_argument("--xdot", action="store_true", help="also write the estimated input rate")
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train a network from an experiment manifest")
    t.add_argument("--manifest", required=True)
    t.add_argument("--seed", type=int, help="override the manifest seed")
    t.add_argument("--out", help="override the manifest output directory")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("simulate", help="run a trained model on an input record")
    s.add_argument("--model", required=True)
    s.add_argument("--input", required=True, help="CSV with t,x")
    s.add_argument("--out", required=True, help="predictions CSV path")
    s.add_argument("--loop", action="store_true", help="write (x, y_pred) pairs only")
    s.set_defaults(func=cmd_simulate)

    e = sub.add_parser("evaluate", help="score a trained model on labelled data")
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True, help="CSV with t,x,y")
    e.add_argument("--split", type=float, help="also score train/test parts at this fraction")
    e.add_argument("--out", help="directory for metrics.csv")
    e.set_defaults(func=cmd_evaluate)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    if getattr(args, "seed", None) is not None and args.seed < 0:
        print("error: --seed must be non-negative", file=sys.stderr)
        return EXIT_USAGE
    threads = os.environ.get("HYSTERLAB_THREADS")
    if threads is not None and not (threads.isdigit() and int(threads) > 0):
        print(f"error: HYSTERLAB_THREADS must be a positive integer, got {threads!r}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

"""Training of the network: nested least-squares objective, a real-coded GA,
Shor's subgradient method with space dilation, and the two-phase hybrid."""

from __future__ import annotations

import hashlib
import json
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Mapping, Optional

import numpy as np

from . import _kernels
from .epnn import (
    RIDGE,
    Architecture,
    EPNNParams,
    hidden_activations,
    inner_size,
    pack,
    simulate_denormalized,
    solve_output_weights,
    unpack,
)
from .signals import ScaleMap, TimeSeriesPair

__all__ = [
    "Epoch",
    "GAConfig",
    "NestedMSE",
    "SGDConfig",
    "SwitchConfig",
    "TrainingConfig",
    "TrainingTrace",
    "evaluate",
    "fd_subgradient",
    "ga_optimize",
    "hybrid_train",
    "inner_bounds",
    "load_config",
    "mse",
    "subgradient_optimize",
]


# --- configuration -------------------------------------------------------------


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class GAConfig:
    population: int = 50
    generations: int = 1000
    crossover_rate: float = 0.9
    mutation_sigma: float = 0.1
    elitism: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.population < 4:
            raise ConfigError("ga.population must be >= 4")
        if self.generations < 0:
            raise ConfigError("ga.generations must be >= 0")
        if not 0.0 <= self.crossover_rate <= 1.0:
            raise ConfigError("ga.crossover_rate must lie in [0, 1]")
        if not self.mutation_sigma >= 0:
            raise ConfigError("ga.mutation_sigma must be >= 0")
        if not 0 <= self.elitism < self.population:
            raise ConfigError("ga.elitism must lie in [0, population)")
        if self.seed < 0:
            raise ConfigError("ga.seed must be >= 0")


@dataclass(frozen=True)
class SGDConfig:
    max_iterations: int = 1000
    dilation: float = 2.0
    initial_step: float = 0.1
    step_decay: float = 0.7
    step_growth: float = 1.5
    max_line_steps: int = 10
    fd_step: float = 1e-6
    stall_tol: float = 1e-10

    def __post_init__(self):
        if self.max_iterations < 0:
            raise ConfigError("sgd.max_iterations must be >= 0")
        if not self.dilation > 1.0:
            raise ConfigError("sgd.dilation must be > 1")
        if not self.initial_step > 0:
            raise ConfigError("sgd.initial_step must be > 0")
        if not 0.0 < self.step_decay < 1.0:
            raise ConfigError("sgd.step_decay must lie in (0, 1)")
        if not self.step_growth >= 1.0:
            raise ConfigError("sgd.step_growth must be >= 1")
        if self.max_line_steps < 1:
            raise ConfigError("sgd.max_line_steps must be >= 1")
        if not self.fd_step > 0:
            raise ConfigError("sgd.fd_step must be > 0")
        if not self.stall_tol >= 0:
            raise ConfigError("sgd.stall_tol must be >= 0")


@dataclass(frozen=True)
class SwitchConfig:
    """GA -> subgradient hand-over: stop the GA once the best MSE improved by
    less than ``threshold`` (relative) over the last ``window`` generations.
    With ``carry_over`` the unused GA generations extend the subgradient budget."""

    window: int = 50
    threshold: float = 0.01
    carry_over: bool = True

    def __post_init__(self):
        if self.window < 1:
            raise ConfigError("switch.window must be >= 1")
        if not self.threshold >= 0:
            raise ConfigError("switch.threshold must be >= 0")


@dataclass(frozen=True)
class BoundsConfig:
    weight: float = 5.0
    log_beta: tuple = (math.log(0.1), math.log(1e8))

    def __post_init__(self):
        if not self.weight > 0:
            raise ConfigError("bounds.weight must be > 0")
        lo, hi = self.log_beta
        if not hi > lo:
            raise ConfigError("bounds.log_beta must be [lo, hi] with lo < hi")
        object.__setattr__(self, "log_beta", (float(lo), float(hi)))


@dataclass(frozen=True)
class TrainingConfig:
    ga: GAConfig = field(default_factory=GAConfig)
    sgd: SGDConfig = field(default_factory=SGDConfig)
    switch: SwitchConfig = field(default_factory=SwitchConfig)
    bounds: BoundsConfig = field(default_factory=BoundsConfig)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["bounds"]["log_beta"] = list(d["bounds"]["log_beta"])
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "TrainingConfig":
        sections = {"ga": GAConfig, "sgd": SGDConfig, "switch": SwitchConfig, "bounds": BoundsConfig}
        if not isinstance(d, Mapping):
            raise ConfigError("config: expected an object")
        kwargs = {}
        for key, value in d.items():
            if key not in sections:
                raise ConfigError(f"config: unknown key '{key}'")
            klass = sections[key]
            names = {f.name for f in fields(klass)}
            if not isinstance(value, Mapping):
                raise ConfigError(f"config.{key}: expected an object")
            for k in value:
                if k not in names:
                    raise ConfigError(f"config.{key}: unknown key '{k}'")
            try:
                kwargs[key] = klass(**value)
            except TypeError as exc:
                raise ConfigError(f"config.{key}: {exc}") from None
        return cls(**kwargs)

    def with_seed(self, seed: int) -> "TrainingConfig":
        return TrainingConfig(
            ga=GAConfig(**{**asdict(self.ga), "seed": int(seed)}), sgd=self.sgd, switch=self.switch, bounds=self.bounds
        )

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def load_config(path) -> TrainingConfig:
    try:
        d = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
    return TrainingConfig.from_dict(d)


# --- trace -------------------------------------------------------------------


@dataclass(frozen=True)
class Epoch:
    phase: str
    best_mse: float
    wall_clock: float


@dataclass
class TrainingTrace:
    epochs: list = field(default_factory=list)
    status: str = ""

    def record(self, phase: str, best: float, t0: float) -> None:
        self.epochs.append(Epoch(phase, float(best), time.perf_counter() - t0))

    @property
    def best(self) -> np.ndarray:
        return np.array([e.best_mse for e in self.epochs])

    def phase_lengths(self) -> dict:
        out: dict = {}
        for e in self.epochs:
            out[e.phase] = out.get(e.phase, 0) + 1
        return out

    def extend(self, other: "TrainingTrace") -> None:
        self.epochs.extend(other.epochs)

    def to_csv(self) -> str:
        """Deterministic CSV (wall-clock omitted so reruns are byte-identical)."""
        lines = ["epoch,phase,mse"]
        lines += [f"{i},{e.phase},{e.best_mse!r}" for i, e in enumerate(self.epochs, start=1)]
        return "\n".join(lines) + "\n"


# --- objective -------------------------------------------------------------------


def mse(params: EPNNParams, arch: Architecture, series: TimeSeriesPair) -> float:
    """Mean squared error with output weights re-fitted on ``series`` itself."""
    if series.y is None:
        raise ValueError("mse needs targets (series.y)")
    H = hidden_activations(params, arch, series)
    c = solve_output_weights(H, series.y)
    r = H @ c - series.y
    return float(np.mean(r * r))


class NestedMSE:
    """Objective over the free inner parameters of a network.

    ``free`` masks which coordinates of the full inner vector are optimised;
    the others are held at ``base``. Evaluations hold no shared mutable state.
    """

    def __init__(self, arch: Architecture, series: TimeSeriesPair, free=None, base=None, lam: float = RIDGE):
        if series.y is None:
            raise ValueError("training series needs targets (y)")
        self.arch = arch
        self.x = np.ascontiguousarray(series.x)
        self.xdot = np.ascontiguousarray(series.xdot if arch.rate_input else np.zeros_like(series.x))
        self.y = np.ascontiguousarray(series.y)
        self.lam = float(lam)
        d = inner_size(arch)
        self.free = np.ones(d, bool) if free is None else np.asarray(free, bool)
        self.base = np.zeros(d) if base is None else np.asarray(base, float).copy()
        self.nevals = 0

    @property
    def dim(self) -> int:
        return int(self.free.sum())

    def full(self, z) -> np.ndarray:
        v = self.base.copy()
        v[self.free] = z
        return v

    def __call__(self, z) -> float:
        self.nevals += 1
        v = _kernels.nested_mse(
            self.full(z), self.arch.n_stop, self.arch.n_tanh, self.x, self.xdot, self.arch.rate_input, self.y, self.lam
        )
        return float(v) if math.isfinite(v) else math.inf

    def batch(self, Z) -> np.ndarray:
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        full = np.repeat(self.base[None, :], Z.shape[0], axis=0)
        full[:, self.free] = Z
        out = np.empty(Z.shape[0])
        self.nevals += Z.shape[0]
        _kernels.batch_nested_mse(
            full, self.arch.n_stop, self.arch.n_tanh, self.x, self.xdot, self.arch.rate_input, self.y, self.lam, out
        )
        return out


def _batch_eval(objective, X) -> np.ndarray:
    batch = getattr(objective, "batch", None)
    if batch is not None:
        return np.asarray(batch(X), dtype=float)
    return np.array([objective(x) for x in X], dtype=float)


# --- finite-difference subgradient ------------------------------------------------------


def fd_subgradient(objective: Callable, point, step: float = 1e-6) -> np.ndarray:
    """Central differences with per-coordinate step ``max(step, step*|x_i|)``.

    A coordinate whose probe is non-finite falls back to the one-sided difference.
    """
    x = np.asarray(point, dtype=float)
    d = x.size
    h = np.maximum(step, step * np.abs(x))
    probes = np.repeat(x[None, :], 2 * d, axis=0)
    idx = np.arange(d)
    probes[idx, idx] += h
    probes[d + idx, idx] -= h
    vals = _batch_eval(objective, probes)
    fp, fm = vals[:d], vals[d:]
    g = (fp - fm) / (2.0 * h)
    bad = ~(np.isfinite(fp) & np.isfinite(fm))
    if np.any(bad):
        f0 = float(objective(x))
        if not math.isfinite(f0):
            raise ValueError("objective is not finite at the differentiation point")
        for i in np.flatnonzero(bad):
            if math.isfinite(fp[i]):
                g[i] = (fp[i] - f0) / h[i]
            elif math.isfinite(fm[i]):
                g[i] = (f0 - fm[i]) / h[i]
            else:
                raise ValueError(f"objective is non-finite on both sides of coordinate {i}")
    return g


# --- genetic algorithm ---------------------------------------------------------------------


def ga_optimize(
    objective: Callable,
    bounds,
    config: GAConfig,
    switch: Optional[SwitchConfig] = None,
    init_population: Optional[np.ndarray] = None,
) -> tuple[np.ndarray, TrainingTrace]:
    """Real-coded GA: size-3 tournaments, BLX-0.5 crossover, Gaussian mutation
    (per-gene probability 1/dim, sigma relative to the bound width), elitism.

    Returns the best individual ever seen. With ``switch`` the run ends early
    once the windowed relative improvement drops below the threshold.
    """
    bounds = np.asarray(bounds, dtype=float)
    if bounds.ndim != 2 or bounds.shape[1] != 2:
        raise ValueError("bounds must have shape (dim, 2)")
    lo, hi = bounds[:, 0], bounds[:, 1]
    if not (np.all(np.isfinite(bounds)) and np.all(hi >= lo)):
        raise ValueError("bounds must be finite with lo <= hi for every coordinate")
    if not isinstance(config, GAConfig):
        raise TypeError("config must be a GAConfig")
    dim = lo.size
    width = hi - lo
    rng = np.random.default_rng(config.seed)
    npop = config.population
    t0 = time.perf_counter()
    trace = TrainingTrace()

    pop = lo + rng.random((npop, dim)) * width
    if init_population is not None:
        seeds = np.atleast_2d(np.asarray(init_population, dtype=float))[:npop]
        pop[: seeds.shape[0]] = np.clip(seeds, lo, hi)
    fit = _batch_eval(objective, pop)
    order = np.argsort(fit, kind="stable")
    best_x, best_f = pop[order[0]].copy(), float(fit[order[0]])
    trace.status = "budget exhausted"
    if best_f == 0.0 or config.generations == 0:
        trace.record("GA", best_f, t0)
        trace.status = "exact fit" if best_f == 0.0 else trace.status
        return best_x, trace

    p_mut = 1.0 / dim
    n_child = npop - config.elitism
    for gen in range(config.generations):
        elite = pop[order[: config.elitism]]
        # tournaments of size 3 (lowest fitness wins)
        cand = rng.integers(0, npop, size=(n_child + 1, 2, 3))
        winners = cand[np.arange(n_child + 1)[:, None], np.arange(2)[None, :], np.argmin(fit[cand], axis=2)]
        p1, p2 = pop[winners[:, 0]], pop[winners[:, 1]]
        cross = rng.random(n_child + 1) < config.crossover_rate
        span = np.abs(p1 - p2)
        cmin = np.minimum(p1, p2) - 0.5 * span
        child = cmin + rng.random(p1.shape) * 2.0 * span
        child = np.where(cross[:, None], child, p1)[:n_child]
        mutate = rng.random(child.shape) < p_mut
        child = child + mutate * rng.normal(0.0, 1.0, child.shape) * (config.mutation_sigma * width)
        child = np.clip(child, lo, hi)
        child_fit = _batch_eval(objective, child)
        pop = np.vstack([elite, child])
        fit = np.concatenate([fit[order[: config.elitism]], child_fit])
        order = np.argsort(fit, kind="stable")
        if fit[order[0]] < best_f:
            best_f = float(fit[order[0]])
            best_x = pop[order[0]].copy()
        trace.record("GA", best_f, t0)
        if best_f == 0.0:
            trace.status = "exact fit"
            break
        if switch is not None and gen + 1 >= switch.window:
            ref = trace.epochs[-1 - switch.window].best_mse if gen + 1 > switch.window else None
            if ref is not None and math.isfinite(ref) and ref > 0 and (ref - best_f) / ref < switch.threshold:
                trace.status = "stalled"
                break
    return best_x, trace


# --- subgradient method with space dilation -------------------------------------------------


def subgradient_optimize(
    objective: Callable, x0, config: SGDConfig, bounds=None, phase: str = "SGD"
) -> tuple[np.ndarray, TrainingTrace]:
    """Shor's r-algorithm with a monotone multi-step line search.

    The search direction is ``B B^T g`` in the original space. After each
    accepted move ``B`` is contracted by ``1/dilation`` along the normalised
    difference of successive transformed subgradients. The step ``h``
    shrinks by ``step_decay`` when a trial step fails and grows by
    ``step_growth`` when the line search runs long. When ``h`` falls below
    ``stall_tol`` the metric and step are reset; a reset that brings no
    progress ends the run. Returns the best point seen; ``trace.status``
    gives the termination reason.
    """
    x = np.asarray(x0, dtype=float).copy()
    if bounds is not None:
        bounds = np.asarray(bounds, dtype=float)
        lo, hi = bounds[:, 0], bounds[:, 1]
        x = np.clip(x, lo, hi)
    clip = (lambda v: np.clip(v, lo, hi)) if bounds is not None else (lambda v: v)
    t0 = time.perf_counter()
    trace = TrainingTrace(status="budget exhausted")
    f = float(objective(x))
    if not math.isfinite(f):
        raise ValueError("objective is not finite at the starting point")
    if config.max_iterations == 0:
        return x, trace
    n = x.size
    B = np.eye(n)
    g = fd_subgradient(objective, x, config.fd_step)
    h = config.initial_step
    shrink = 1.0 / config.dilation - 1.0
    f_restart = math.inf

    for _ in range(config.max_iterations):
        gt = B.T @ g
        norm = float(np.linalg.norm(gt))
        if norm <= 1e-12:
            trace.status = "zero subgradient"
            trace.record(phase, f, t0)
            break
        d = B @ (gt / norm)

        # first trial step, halving on non-finite values
        for _retry in range(21):
            x_try = clip(x - h * d)
            f_try = float(objective(x_try))
            if math.isfinite(f_try):
                break
            h *= 0.5
        else:
            trace.status = "non-finite objective"
            trace.record(phase, f, t0)
            break

        if f_try < f:
            steps = 1
            while steps < config.max_line_steps:
                x_next = clip(x_try - h * d)
                f_next = float(objective(x_next))
                if not f_next < f_try:
                    break
                x_try, f_try = x_next, f_next
                steps += 1
            if steps >= 3:
                h *= config.step_growth
            x, f = x_try, f_try
            g_new = fd_subgradient(objective, x, config.fd_step)
            r = B.T @ (g_new - g)
            rn = float(np.linalg.norm(r))
            if rn > 1e-15:
                eta = r / rn
                B = B + shrink * np.outer(B @ eta, eta)
            g = g_new
        else:
            h *= config.step_decay
        trace.record(phase, f, t0)
        if f == 0.0:
            trace.status = "exact fit"
            break
        if h < config.stall_tol:
            # restart the metric; give up once a restart brings no progress
            if f >= f_restart:
                trace.status = "stalled"
                break
            f_restart = f
            B = np.eye(n)
            h = config.initial_step
    return x, trace


# --- hybrid training ---------------------------------------------------------------------


def inner_bounds(arch: Architecture, config: TrainingConfig, series: TimeSeriesPair) -> tuple[np.ndarray, np.ndarray]:
    """Search box for the inner vector and the mask of free coordinates.

    Rate weights are bounded by ``weight / max|xdot|`` so that the rate term
    spans the same range as the input term; without a rate input they are fixed at 0.
    """
    n, m = arch.n_stop, arch.n_tanh
    w = config.bounds.weight
    lb, ub = config.bounds.log_beta
    rate_w = 0.0
    if arch.rate_input:
        peak = float(np.max(np.abs(series.xdot)))
        rate_w = w / peak if peak > 0 else w
    per = np.array([[-w, w], [-rate_w, rate_w], [-w, w], [lb, ub]])
    rows = [np.tile(per, (n, 1)), [[-w, w], [-rate_w, rate_w]], np.tile([[-w, w]], ((n + 1) * m + m, 1))]
    b = np.vstack(rows)
    free = np.ones(inner_size(arch), bool)
    if not arch.rate_input:
        free[1 : 4 * n : 4] = False
        free[4 * n + 1] = False
    return b, free


def _check_training_series(arch: Architecture, series: TimeSeriesPair) -> None:
    if series.y is None:
        raise ValueError("training series needs targets (y)")
    if np.max(np.abs(series.x)) > 1.0 + 1e-9:
        raise ValueError("training series must be normalized (|x| <= 1)")
    if arch.rate_input and series.xdot is None:
        raise ValueError("architecture uses the rate input but the series has no xdot channel")


def _finish(arch: Architecture, series: TimeSeriesPair, vector: np.ndarray) -> EPNNParams:
    params = unpack(vector, arch)
    H = hidden_activations(params, arch, series)
    return params.with_output_weights(solve_output_weights(H, series.y))


def random_inner(arch: Architecture, config: TrainingConfig, series: TimeSeriesPair, seed: int) -> np.ndarray:
    """One draw from the GA's initial-population distribution."""
    b, free = inner_bounds(arch, config, series)
    rng = np.random.default_rng(seed)
    v = b[:, 0] + rng.random(b.shape[0]) * (b[:, 1] - b[:, 0])
    v[~free] = 0.0
    return v


def hybrid_train(
    arch: Architecture, series: TimeSeriesPair, config: TrainingConfig, mode: str = "hybrid"
) -> tuple[EPNNParams, TrainingTrace]:
    """GA until the MSE stalls, then the subgradient method from the GA's best.

    ``mode`` selects ``"hybrid"`` (default), ``"ga"`` or ``"sgd"`` (from a random
    start); the single-method modes spend the combined epoch budget
    ``ga.generations + sgd.max_iterations`` on one method.
    """
    _check_training_series(arch, series)
    if mode not in ("hybrid", "ga", "sgd"):
        raise ValueError(f"unknown training mode {mode!r}")
    _kernels.configure_threads()
    bounds, free = inner_bounds(arch, config, series)
    objective = NestedMSE(arch, series, free=free)
    fb = bounds[free]
    total = config.ga.generations + config.sgd.max_iterations
    trace = TrainingTrace()

    if np.ptp(series.y) == 0.0:
        v = random_inner(arch, config, series, config.ga.seed)
        trace.epochs.append(Epoch("GA", 0.0, 0.0))
        trace.status = "constant targets"
        return _finish(arch, series, v), trace

    if mode == "sgd":
        z0 = random_inner(arch, config, series, config.ga.seed)[free]
        sgd = SGDConfig(**{**asdict(config.sgd), "max_iterations": total})
        z, t = subgradient_optimize(objective, z0, sgd, bounds=fb)
        trace.extend(t)
        trace.status = t.status
        return _finish(arch, series, objective.full(z)), trace

    if mode == "ga":
        ga = GAConfig(**{**asdict(config.ga), "generations": total})
        z, t = ga_optimize(objective, fb, ga)
        trace.extend(t)
        trace.status = t.status
        return _finish(arch, series, objective.full(z)), trace

    z, t = ga_optimize(objective, fb, config.ga, switch=config.switch)
    trace.extend(t)
    ga_status = t.status
    budget = config.sgd.max_iterations
    if config.switch.carry_over:
        budget += config.ga.generations - len(t.epochs)
    if t.status != "exact fit" and budget > 0:
        sgd = SGDConfig(**{**asdict(config.sgd), "max_iterations": budget})
        z, t2 = subgradient_optimize(objective, z, sgd, bounds=fb)
        trace.extend(t2)
        trace.status = f"GA: {ga_status}; SGD: {t2.status}"
    else:
        trace.status = f"GA: {ga_status}"
    return _finish(arch, series, objective.full(z)), trace


# --- evaluation ------------------------------------------------------------------------------


def evaluate(
    params: EPNNParams,
    arch: Architecture,
    series: TimeSeriesPair,
    scale_maps: Mapping[str, ScaleMap],
    start: int = 0,
) -> dict:
    """Error metrics in original output units over samples ``start:``.

    The whole record is simulated so that a held-out tail is predicted with the
    memory state built up over the preceding samples. Relative error per sample
    is ``|y_hat - y| / max|y|`` with the maximum taken over the scored samples.
    """
    if series.y is None:
        raise ValueError("evaluation needs targets (series.y)")
    if not 0 <= start < len(series):
        raise ValueError(f"start must lie in [0, {len(series)}), got {start}")
    pred = simulate_denormalized(params, arch, series, scale_maps)[start:]
    y = series.y[start:]
    err = pred - y
    peak = float(np.max(np.abs(y)))
    rel = np.abs(err) / peak if peak > 0 else np.abs(err)
    return {
        "mse": float(np.mean(err * err)),
        "max_relative_error": float(np.max(rel)),
        "relative_error": rel,
        "prediction": pred,
    }

"""Synthetic hysteresis generators used as ground truth.

Four families are available, each described by a small spec record that can
be read from / written to JSON:

========== ==============================================================
``pi``      Prandtl-Ishlinskii: weighted sum of stop operators
``gpnn``    weighted sum of deteriorating stop operators
``preisach`` discretised relay superposition on an (s, r) grid
``rdpi``    PI model whose thresholds widen with the input rate
========== ==============================================================
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Optional

import numpy as np

from . import _kernels
from .signals import TimeSeriesPair

__all__ = [
    "GPNNSpec",
    "PISpec",
    "PreisachSpec",
    "RDPISpec",
    "default_gpnn_spec",
    "default_pi_spec",
    "gpnn_simulate",
    "load_spec",
    "loop_area",
    "masing_branch",
    "pi_simulate",
    "preisach_simulate",
    "rdpi_simulate",
    "simulate",
    "spec_from_dict",
    "spec_to_dict",
]


def _vec(v, name) -> np.ndarray:
    a = np.atleast_1d(np.asarray(v, dtype=float))
    if a.ndim != 1 or a.size == 0:
        raise ValueError(f"{name} must be a non-empty 1-D array")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} must be finite")
    return a


@dataclass(frozen=True)
class PISpec:
    thresholds: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        r = _vec(self.thresholds, "thresholds")
        w = _vec(self.weights, "weights")
        if r.shape != w.shape:
            raise ValueError("thresholds and weights must have equal length")
        if np.any(r <= 0):
            raise ValueError("thresholds must be > 0")
        if np.any(np.diff(r) <= 0):
            raise ValueError("thresholds must be strictly ascending")
        object.__setattr__(self, "thresholds", r)
        object.__setattr__(self, "weights", w)


@dataclass(frozen=True)
class GPNNSpec:
    thresholds: np.ndarray
    betas: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        r = _vec(self.thresholds, "thresholds")
        b = _vec(self.betas, "betas")
        w = _vec(self.weights, "weights")
        if not r.shape == b.shape == w.shape:
            raise ValueError("thresholds, betas and weights must have equal length")
        if np.any(r <= 0) or np.any(b <= 0):
            raise ValueError("thresholds and betas must be > 0")
        object.__setattr__(self, "thresholds", r)
        object.__setattr__(self, "betas", b)
        object.__setattr__(self, "weights", w)


@dataclass(frozen=True)
class PreisachSpec:
    """Relay cells with means ``s``, half-widths ``r`` and weights (density x area)."""

    s: np.ndarray
    r: np.ndarray
    weights: np.ndarray
    bounds: tuple = (-1.0, 1.0)
    resolution: int = 64

    def __post_init__(self):
        s = _vec(self.s, "s")
        r = _vec(self.r, "r")
        w = _vec(self.weights, "weights")
        if not s.shape == r.shape == w.shape:
            raise ValueError("s, r and weights must have equal length")
        if np.any(r <= 0):
            raise ValueError("relay half-widths must be > 0")
        if np.any(w < 0):
            raise ValueError("relay weights must be >= 0")
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bounds", (float(self.bounds[0]), float(self.bounds[1])))

    @classmethod
    def from_density(
        cls,
        density: Callable[[np.ndarray, np.ndarray], np.ndarray],
        bounds=(-1.0, 1.0),
        resolution: int = 64,
    ) -> "PreisachSpec":
        """Discretise ``density(r, s)`` on a uniform grid over the triangle of
        relays that inputs within ``bounds`` can switch both ways."""
        lo, hi = float(bounds[0]), float(bounds[1])
        if not hi > lo:
            raise ValueError("bounds must satisfy lo < hi")
        if resolution < 1:
            raise ValueError("resolution must be >= 1")
        ds = (hi - lo) / resolution
        dr = 0.5 * (hi - lo) / resolution
        s_c = lo + (np.arange(resolution) + 0.5) * ds
        r_c = (np.arange(resolution) + 0.5) * dr
        S, R = np.meshgrid(s_c, r_c, indexing="ij")
        inside = (S - R >= lo) & (S + R <= hi)
        S, R = S[inside], R[inside]
        mu = np.asarray(density(R, S), dtype=float) * np.ones_like(S)
        return cls(s=S, r=R, weights=mu * ds * dr, bounds=(lo, hi), resolution=resolution)


@dataclass(frozen=True)
class RDPISpec:
    """PI model with thresholds ``r_j * (1 + rate_coeff * |xdot|)``."""

    pi: PISpec
    rate_coeff: float = 0.0

    def __post_init__(self):
        if not self.rate_coeff >= 0:
            raise ValueError("rate_coeff must be >= 0")


def default_pi_spec() -> PISpec:
    return PISpec(thresholds=[0.2, 0.4, 0.6, 0.8, 1.0], weights=[1.0, 0.8, 0.6, 0.4, 0.3])


def default_gpnn_spec() -> GPNNSpec:
    """Fixed 5-term deteriorating fixture used by the identification tests."""
    return GPNNSpec(
        thresholds=[0.2, 0.4, 0.6, 0.8, 1.0],
        betas=[150.0, 100.0, 80.0, 60.0, 1e7],
        weights=[1.0, 0.8, 0.6, 0.4, 0.3],
    )


def pi_simulate(spec: PISpec, series: TimeSeriesPair) -> np.ndarray:
    out = np.empty((len(series), spec.thresholds.size))
    _kernels.stop_sequence(series.x, spec.thresholds, out)
    return out @ spec.weights


def gpnn_simulate(spec: GPNNSpec, series: TimeSeriesPair) -> np.ndarray:
    u = np.repeat(series.x[:, None], spec.thresholds.size, axis=1)
    out = np.empty_like(u)
    _kernels.ds_sequence(u, spec.thresholds, spec.betas, out)
    return out @ spec.weights


def preisach_states(spec: PreisachSpec, series: TimeSeriesPair) -> np.ndarray:
    """Relay signs (N, cells)."""
    sign0 = np.where(spec.s > 0.0, -1.0, 1.0)
    out = np.empty((len(series), spec.s.size))
    _kernels.relay_sequence(series.x, spec.s - spec.r, spec.s + spec.r, sign0, out)
    return out


def preisach_simulate(spec: PreisachSpec, series: TimeSeriesPair) -> np.ndarray:
    return preisach_states(spec, series) @ spec.weights


def rdpi_simulate(spec: RDPISpec, series: TimeSeriesPair) -> np.ndarray:
    if series.xdot is None:
        raise ValueError("rate-dependent PI simulation needs the xdot channel; call estimate_rate first")
    out = np.empty((len(series), spec.pi.thresholds.size))
    _kernels.rate_stop_sequence(series.x, series.xdot, spec.pi.thresholds, float(spec.rate_coeff), out)
    return out @ spec.pi.weights


def masing_branch(virgin: Callable, reversal: tuple[float, float], x, check_points: Optional[np.ndarray] = None):
    """Branch ``y* + 2 g((x - x*)/2)`` leaving the reversal point ``(x*, y*)``."""
    pts = np.linspace(-1.0, 1.0, 11) * (1.0 + abs(reversal[0])) if check_points is None else check_points
    if not np.allclose(virgin(-pts), -virgin(pts), rtol=1e-9, atol=1e-12):
        raise ValueError("virgin curve must be an odd function")
    xs, ys = reversal
    return ys + 2.0 * virgin((np.asarray(x, dtype=float) - xs) / 2.0)


def loop_area(x, y) -> float:
    """Unsigned shoelace area of the closed polygon through ``(x, y)``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def simulate(spec, series: TimeSeriesPair) -> np.ndarray:
    if isinstance(spec, PISpec):
        return pi_simulate(spec, series)
    if isinstance(spec, GPNNSpec):
        return gpnn_simulate(spec, series)
    if isinstance(spec, PreisachSpec):
        return preisach_simulate(spec, series)
    if isinstance(spec, RDPISpec):
        return rdpi_simulate(spec, series)
    raise TypeError(f"unsupported spec type {type(spec).__name__}")


# --- JSON ------------------------------------------------------------------


class SpecError(ValueError):
    """Schema violation in a reference-model spec; ``path`` locates the field."""

    def __init__(self, message: str, path: str):
        super().__init__(f"{path}: {message}")
        self.path = path


def _take(d: Mapping, allowed: set, path: str) -> None:
    extra = sorted(set(d) - allowed)
    if extra:
        raise SpecError(f"unknown key '{extra[0]}'", f"{path}.{extra[0]}")


def _field(d: Mapping, key: str, path: str):
    if key not in d:
        raise SpecError("missing required field", f"{path}.{key}")
    return d[key]


def _numbers(d: Mapping, key: str, path: str) -> np.ndarray:
    try:
        return np.asarray(_field(d, key, path), dtype=float)
    except (TypeError, ValueError):
        raise SpecError("expected a number or list of numbers", f"{path}.{key}") from None


_DENSITIES = {
    # (r, s) -> density
    "gaussian": lambda p: (
        lambda r, s: np.exp(
            -0.5 * ((r - p.get("mean_r", 0.3)) / p.get("sigma_r", 0.2)) ** 2
            - 0.5 * ((s - p.get("mean_s", 0.0)) / p.get("sigma_s", 0.3)) ** 2
        )
    ),
    "uniform": lambda p: (lambda r, s: np.full_like(r, p.get("value", 1.0))),
}


def spec_from_dict(d: Mapping, path: str = "spec"):
    """Build a spec from its JSON form; raises :class:`SpecError` naming the field."""
    if not isinstance(d, Mapping):
        raise SpecError("expected an object", path)
    model = _field(d, "model", path)
    try:
        if model == "pi":
            _take(d, {"model", "thresholds", "weights"}, path)
            return PISpec(_numbers(d, "thresholds", path), _numbers(d, "weights", path))
        if model == "gpnn":
            _take(d, {"model", "thresholds", "betas", "weights"}, path)
            return GPNNSpec(_numbers(d, "thresholds", path), _numbers(d, "betas", path), _numbers(d, "weights", path))
        if model == "rdpi":
            _take(d, {"model", "thresholds", "weights", "rate_coeff"}, path)
            return RDPISpec(
                PISpec(_numbers(d, "thresholds", path), _numbers(d, "weights", path)),
                float(_numbers(d, "rate_coeff", path)),
            )
        if model == "preisach":
            _take(d, {"model", "bounds", "resolution", "density", "s", "r", "weights"}, path)
            bounds = tuple(d.get("bounds", (-1.0, 1.0)))
            if len(bounds) != 2:
                raise SpecError("expected [lo, hi]", f"{path}.bounds")
            if "density" in d:
                dens = d["density"]
                kind = _field(dens, "type", f"{path}.density")
                if kind not in _DENSITIES:
                    raise SpecError(f"unknown density type {kind!r}", f"{path}.density.type")
                return PreisachSpec.from_density(
                    _DENSITIES[kind](dens), bounds=bounds, resolution=int(d.get("resolution", 64))
                )
            return PreisachSpec(
                _numbers(d, "s", path), _numbers(d, "r", path), _numbers(d, "weights", path), bounds=bounds
            )
    except SpecError:
        raise
    except (TypeError, ValueError) as exc:
        raise SpecError(str(exc), path) from None
    raise SpecError(f"unknown model {model!r}", f"{path}.model")


def spec_to_dict(spec) -> dict:
    if isinstance(spec, PISpec):
        return {"model": "pi", "thresholds": spec.thresholds.tolist(), "weights": spec.weights.tolist()}
    if isinstance(spec, GPNNSpec):
        return {
            "model": "gpnn",
            "thresholds": spec.thresholds.tolist(),
            "betas": spec.betas.tolist(),
            "weights": spec.weights.tolist(),
        }
    if isinstance(spec, RDPISpec):
        return {
            "model": "rdpi",
            "thresholds": spec.pi.thresholds.tolist(),
            "weights": spec.pi.weights.tolist(),
            "rate_coeff": spec.rate_coeff,
        }
    if isinstance(spec, PreisachSpec):
        return {
            "model": "preisach",
            "bounds": list(spec.bounds),
            "s": spec.s.tolist(),
            "r": spec.r.tolist(),
            "weights": spec.weights.tolist(),
        }
    raise TypeError(f"unsupported spec type {type(spec).__name__}")


def load_spec(path):
    with Path(path).open(encoding="utf-8") as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SpecError(f"invalid JSON ({exc.msg} at line {exc.lineno})", "spec") from None
    return spec_from_dict(d)

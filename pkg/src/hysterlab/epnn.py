"""Extended Preisach neural network.

Layers, per sample ``t``:

1. ``n_stop`` NDS neurons, neuron ``j`` driving a unit-threshold deteriorating
   stop with ``w_x[j]*x + w_xdot[j]*xdot + bias[j]``;
   one linear neuron ``v = lin_w_x*x + lin_w_xdot*xdot``.
2. ``n_tanh`` neurons ``h_k = tanh(W[k] . [nds, v] + b[k])``.
3. Output ``y = c[:-1] . h + c[-1]`` with ``c`` fitted by ridge least squares.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Optional

import numpy as np

from . import __version__, _kernels
from .operators import nds_init, nds_step, soundness
from .signals import ScaleMap, TimeSeriesPair, apply_scaling, estimate_rate

__all__ = [
    "Architecture",
    "EPNNParams",
    "ExtrapolationWarning",
    "ForwardState",
    "FORMAT_VERSION",
    "Model",
    "RIDGE",
    "forward",
    "hidden_activations",
    "inner_size",
    "load_model",
    "pack",
    "save_model",
    "simulate_denormalized",
    "solve_output_weights",
    "unpack",
    "weight_parameter_count",
]

FORMAT_VERSION = 1
RIDGE = _kernels.RIDGE
NORMALIZED_TOL = 1e-9
EXTRAPOLATION_LIMIT = 1.2


class ExtrapolationWarning(UserWarning):
    """Input leaves the range seen during training by more than 20 %."""


@dataclass(frozen=True)
class Architecture:
    n_stop: int
    n_tanh: int
    rate_input: bool = True

    def __post_init__(self):
        if int(self.n_stop) < 1 or int(self.n_tanh) < 1:
            raise ValueError("n_stop and n_tanh must be >= 1")
        object.__setattr__(self, "n_stop", int(self.n_stop))
        object.__setattr__(self, "n_tanh", int(self.n_tanh))
        object.__setattr__(self, "rate_input", bool(self.rate_input))

    def to_dict(self) -> dict:
        return {"n_stop": self.n_stop, "n_tanh": self.n_tanh, "rate_input": self.rate_input}

    @classmethod
    def from_dict(cls, d: Mapping) -> "Architecture":
        unknown = set(d) - {"n_stop", "n_tanh", "rate_input"}
        if unknown:
            raise ValueError(f"unknown architecture key '{sorted(unknown)[0]}'")
        return cls(int(d["n_stop"]), int(d["n_tanh"]), bool(d.get("rate_input", True)))


def inner_size(arch: Architecture) -> int:
    """Length of the optimised parameter vector (output weights excluded)."""
    n, m = arch.n_stop, arch.n_tanh
    return 4 * n + 2 + (n + 1) * m + m


def weight_parameter_count(arch: Architecture) -> int:
    """Count of independent connection weights when NDS biases and deterioration
    parameters are left out: ``n*m + 2(n + m + 1)``."""
    n, m = arch.n_stop, arch.n_tanh
    return n * m + 2 * (n + m + 1)


@dataclass(frozen=True)
class EPNNParams:
    nds_w_x: np.ndarray
    nds_w_xdot: np.ndarray
    nds_bias: np.ndarray
    nds_log_beta: np.ndarray
    lin_w_x: float
    lin_w_xdot: float
    tanh_weights: np.ndarray  # (n_tanh, n_stop + 1); last column weighs the linear neuron
    tanh_bias: np.ndarray
    output_weights: Optional[np.ndarray] = None  # (n_tanh + 1,); last entry is the bias

    def __post_init__(self):
        for name in ("nds_w_x", "nds_w_xdot", "nds_bias", "nds_log_beta", "tanh_bias"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float).reshape(-1))
        W = np.atleast_2d(np.asarray(self.tanh_weights, dtype=float))
        object.__setattr__(self, "tanh_weights", W)
        object.__setattr__(self, "lin_w_x", float(self.lin_w_x))
        object.__setattr__(self, "lin_w_xdot", float(self.lin_w_xdot))
        n = self.nds_w_x.size
        if not (self.nds_w_xdot.size == self.nds_bias.size == self.nds_log_beta.size == n):
            raise ValueError("per-NDS parameter arrays must have equal length")
        if W.shape != (self.tanh_bias.size, n + 1):
            raise ValueError(f"tanh_weights must have shape ({self.tanh_bias.size}, {n + 1}), got {W.shape}")
        if self.output_weights is not None:
            c = np.asarray(self.output_weights, dtype=float).reshape(-1)
            if c.size != self.tanh_bias.size + 1:
                raise ValueError("output_weights must have n_tanh + 1 entries")
            object.__setattr__(self, "output_weights", c)
        if not np.all(np.isfinite(pack(self))):
            raise ValueError("parameters must be finite")

    @property
    def beta(self) -> np.ndarray:
        return np.exp(self.nds_log_beta)

    @property
    def arch_shape(self) -> tuple[int, int]:
        return self.nds_w_x.size, self.tanh_bias.size

    def with_output_weights(self, c) -> "EPNNParams":
        return replace(self, output_weights=np.asarray(c, dtype=float))

    @classmethod
    def from_betas(cls, *, nds_beta, **kwargs) -> "EPNNParams":
        return cls(nds_log_beta=np.log(np.asarray(nds_beta, dtype=float)), **kwargs)

    def to_dict(self) -> dict:
        return {
            "nds_w_x": self.nds_w_x.tolist(),
            "nds_w_xdot": self.nds_w_xdot.tolist(),
            "nds_bias": self.nds_bias.tolist(),
            "nds_log_beta": self.nds_log_beta.tolist(),
            "lin_w_x": self.lin_w_x,
            "lin_w_xdot": self.lin_w_xdot,
            "tanh_weights": self.tanh_weights.tolist(),
            "tanh_bias": self.tanh_bias.tolist(),
            "output_weights": None if self.output_weights is None else self.output_weights.tolist(),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "EPNNParams":
        return cls(**{k: d[k] for k in d})


def pack(params: EPNNParams) -> np.ndarray:
    """Flatten the inner parameters (deterioration stored as log beta)."""
    per = np.column_stack([params.nds_w_x, params.nds_w_xdot, params.nds_bias, params.nds_log_beta])
    return np.concatenate(
        [per.reshape(-1), [params.lin_w_x, params.lin_w_xdot], params.tanh_weights.reshape(-1), params.tanh_bias]
    )


def unpack(vector, arch: Architecture) -> EPNNParams:
    v = np.asarray(vector, dtype=float)
    if v.ndim != 1 or v.size != inner_size(arch):
        raise ValueError(f"expected a flat vector of length {inner_size(arch)} for {arch}, got shape {v.shape}")
    n, m = arch.n_stop, arch.n_tanh
    per = v[: 4 * n].reshape(n, 4)
    woff = 4 * n + 2
    boff = woff + m * (n + 1)
    return EPNNParams(
        nds_w_x=per[:, 0].copy(),
        nds_w_xdot=per[:, 1].copy(),
        nds_bias=per[:, 2].copy(),
        nds_log_beta=per[:, 3].copy(),
        lin_w_x=v[4 * n],
        lin_w_xdot=v[4 * n + 1],
        tanh_weights=v[woff:boff].reshape(m, n + 1).copy(),
        tanh_bias=v[boff:].copy(),
    )


def _check_compatible(params: EPNNParams, arch: Architecture) -> None:
    if params.arch_shape != (arch.n_stop, arch.n_tanh):
        raise ValueError(f"parameters have shape {params.arch_shape}, architecture expects {(arch.n_stop, arch.n_tanh)}")


def _rate_channel(arch: Architecture, series: TimeSeriesPair) -> np.ndarray:
    if not arch.rate_input:
        return np.zeros_like(series.x)
    if series.xdot is None:
        raise ValueError("architecture uses the rate input but the series has no xdot channel")
    return series.xdot


def hidden_activations(
    params: EPNNParams, arch: Architecture, series: TimeSeriesPair, check_range: bool = True
) -> np.ndarray:
    """Second-layer activations with a trailing column of ones, shape (N, n_tanh + 1)."""
    _check_compatible(params, arch)
    if check_range and np.max(np.abs(series.x)) > 1.0 + NORMALIZED_TOL:
        raise ValueError(
            f"input is not normalized: max |x| = {np.max(np.abs(series.x)):.6g} > 1; "
            "scale the series with signals.normalize first"
        )
    H = np.empty((len(series), arch.n_tanh + 1))
    _kernels.hidden_layer(pack(params), arch.n_stop, arch.n_tanh, series.x, _rate_channel(arch, series), arch.rate_input, H)
    return H


def forward(params: EPNNParams, arch: Architecture, series: TimeSeriesPair, check_range: bool = True) -> np.ndarray:
    """Network output on a normalized series; states start fresh at sample 0."""
    if params.output_weights is None:
        raise ValueError("output weights are not set; call solve_output_weights first")
    return hidden_activations(params, arch, series, check_range) @ params.output_weights


def solve_output_weights(hidden, targets, lam: float = RIDGE) -> np.ndarray:
    H = np.ascontiguousarray(hidden, dtype=float)
    y = np.ascontiguousarray(targets, dtype=float)
    if H.ndim != 2 or y.shape != (H.shape[0],):
        raise ValueError("hidden must be (N, p) and targets (N,)")
    if H.shape[0] < H.shape[1]:
        raise ValueError(f"need at least {H.shape[1]} samples to solve the output layer, got {H.shape[0]}")
    return _kernels.ridge_solve(H, y, float(lam))


@dataclass
class ForwardState:
    """Sample-by-sample evaluation built on the scalar operators.

    Slower than :func:`forward` but steppable, e.g. for online use.
    """

    params: EPNNParams
    arch: Architecture
    nds: list = field(default_factory=list)
    linear: float = 0.0

    @classmethod
    def start(cls, params: EPNNParams, arch: Architecture, x0: float, xdot0: float = 0.0) -> "ForwardState":
        _check_compatible(params, arch)
        wd = params.nds_w_xdot if arch.rate_input else np.zeros_like(params.nds_w_xdot)
        xdot0 = xdot0 if arch.rate_input else 0.0
        nds = [
            nds_init(params.nds_w_x[j], wd[j], params.nds_bias[j], math.exp(params.nds_log_beta[j]), x0, xdot0)
            for j in range(arch.n_stop)
        ]
        st = cls(params=params, arch=arch, nds=nds)
        st.linear = st._linear(x0, xdot0)
        return st

    def _linear(self, x, xdot) -> float:
        wd = self.params.lin_w_xdot if self.arch.rate_input else 0.0
        return self.params.lin_w_x * x + wd * xdot

    def _output(self) -> float:
        act = np.array([s.ds.stop.y * soundness(s.ds.s, 1.0, s.ds.beta) for s in self.nds] + [self.linear])
        h = np.tanh(self.params.tanh_weights @ act + self.params.tanh_bias)
        c = self.params.output_weights
        return float(h @ c[:-1] + c[-1])

    def output(self) -> float:
        return self._output()

    def step(self, x: float, xdot: float = 0.0) -> float:
        xdot = xdot if self.arch.rate_input else 0.0
        self.nds = [nds_step(s, x, xdot)[0] for s in self.nds]
        self.linear = self._linear(x, xdot)
        return self._output()


# --- model files -------------------------------------------------------------


@dataclass
class Model:
    arch: Architecture
    params: EPNNParams
    scale_maps: dict
    meta: dict = field(default_factory=dict)


def simulate_denormalized(
    params: EPNNParams, arch: Architecture, series: TimeSeriesPair, scale_maps: Mapping[str, ScaleMap]
) -> np.ndarray:
    """Predictions in original output units for a raw (unscaled) input record."""
    if arch.rate_input and series.xdot is None:
        series = estimate_rate(series)
    scaled = apply_scaling(TimeSeriesPair(t=series.t, x=series.x, xdot=series.xdot), scale_maps)
    excess = float(np.max(np.abs(scaled.x)))
    if excess > EXTRAPOLATION_LIMIT:
        warnings.warn(
            f"input reaches {excess:.3g} in normalized units, beyond the training range by more than 20%",
            ExtrapolationWarning,
            stacklevel=2,
        )
    y = forward(params, arch, scaled, check_range=False)
    ymap = scale_maps.get("y", ScaleMap())
    return ymap.unapply(y)


def save_model(path, model: Model) -> None:
    doc = {
        "format_version": FORMAT_VERSION,
        "tool_version": __version__,
        "meta": model.meta,
        "arch": model.arch.to_dict(),
        "scale_maps": {k: v.to_dict() for k, v in sorted(model.scale_maps.items())},
        "params": model.params.to_dict(),
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_model(path) -> Model:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: model format version {version!r} is not supported (expected {FORMAT_VERSION})")
    arch = Architecture.from_dict(doc["arch"])
    params = EPNNParams.from_dict(doc["params"])
    _check_compatible(params, arch)
    maps = {k: ScaleMap.from_dict(v) for k, v in doc["scale_maps"].items()}
    return Model(arch=arch, params=params, scale_maps=maps, meta=doc.get("meta", {}))

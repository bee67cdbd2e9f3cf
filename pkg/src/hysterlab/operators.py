"""Sample-by-sample hysteresis operators.

Each operator is a frozen state record plus pure ``*_step`` functions that
return the advanced state. The kernels here are scalar and meant for
clarity and as oracles; bulk simulation goes through
:mod:`hysterlab._kernels`, which implements the same recurrences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

__all__ = [
    "DSState",
    "NDSState",
    "RelayState",
    "StopState",
    "clamp",
    "ds_init",
    "ds_output",
    "ds_step",
    "nds_init",
    "nds_step",
    "play_step",
    "relay_init",
    "relay_step",
    "slip_update",
    "soundness",
    "stop_init",
    "stop_step",
]


def clamp(v: float, r: float) -> float:
    """Saturation ``e_r(v) = min(r, max(-r, v))``."""
    return min(r, max(-r, v))


def _check_finite(v: float) -> float:
    v = float(v)
    if not math.isfinite(v):
        raise ValueError(f"operator input must be finite, got {v}")
    return v


@dataclass(frozen=True)
class StopState:
    r: float
    y: float
    x_prev: float

    @property
    def play(self) -> float:
        return self.x_prev - self.y


def stop_init(r: float, x0: float) -> StopState:
    if not r > 0:
        raise ValueError(f"stop threshold must be > 0, got {r}")
    x0 = _check_finite(x0)
    return StopState(r=float(r), y=clamp(x0, r), x_prev=x0)


def stop_step(state: StopState, x_new: float) -> StopState:
    x_new = _check_finite(x_new)
    y = clamp(x_new - state.x_prev + state.y, state.r)
    return StopState(r=state.r, y=y, x_prev=x_new)


def play_step(state: StopState, x_new: float) -> tuple[StopState, float]:
    """Advance the stop and return it together with the play output ``x - stop``."""
    new = stop_step(state, x_new)
    return new, new.x_prev - new.y


@dataclass(frozen=True)
class RelayState:
    alpha: float
    beta_thr: float
    sign: int


def relay_step(state: RelayState, x_new: float) -> RelayState:
    x_new = _check_finite(x_new)
    if x_new >= state.beta_thr:
        sign = 1
    elif x_new <= state.alpha:
        sign = -1
    else:
        sign = state.sign
    return replace(state, sign=sign)


def relay_init(s: float, r: float, x0: float) -> RelayState:
    """Relay with mean ``s`` and half-width ``r``.

    Starts at -1 when ``s > 0`` and +1 otherwise, then sees ``x0`` once.
    """
    if not r > 0:
        raise ValueError(f"relay half-width must be > 0, got {r}")
    seed = -1 if s > 0.0 else 1
    return relay_step(RelayState(alpha=s - r, beta_thr=s + r, sign=seed), x0)


def slip_update(s_prev: float, play_prev: float, play_new: float) -> float:
    return s_prev + abs(play_new - play_prev)


def soundness(s: float, r: float, beta: float) -> float:
    """Bilinear soundness index; zero from ``s >= r*beta`` on."""
    limit = r * beta
    return 1.0 - s / limit if s < limit else 0.0


@dataclass(frozen=True)
class DSState:
    """Deteriorating stop: a stop operator whose output is scaled by soundness
    of the accumulated play travel ``s``."""

    stop: StopState
    s: float
    beta: float


def ds_init(r: float, beta: float, x0: float) -> DSState:
    if not beta > 0:
        raise ValueError(f"deterioration parameter must be > 0, got {beta}")
    return DSState(stop=stop_init(r, x0), s=0.0, beta=float(beta))


def ds_output(state: DSState) -> float:
    return state.stop.y * soundness(state.s, state.stop.r, state.beta)


def ds_step(state: DSState, x_new: float) -> tuple[DSState, float]:
    play_prev = state.stop.play
    stop, play_new = play_step(state.stop, x_new)
    new = DSState(stop=stop, s=slip_update(state.s, play_prev, play_new), beta=state.beta)
    return new, ds_output(new)


@dataclass(frozen=True)
class NDSState:
    """Unit-threshold deteriorating stop fed by ``w_x*x + w_xdot*xdot + bias``."""

    w_x: float
    w_xdot: float
    bias: float
    ds: DSState

    def drive(self, x: float, xdot: float) -> float:
        return self.w_x * x + self.w_xdot * xdot + self.bias


def nds_init(w_x: float, w_xdot: float, bias: float, beta: float, x0: float, xdot0: float = 0.0) -> NDSState:
    u0 = w_x * _check_finite(x0) + w_xdot * _check_finite(xdot0) + bias
    return NDSState(w_x=float(w_x), w_xdot=float(w_xdot), bias=float(bias), ds=ds_init(1.0, beta, u0))


def nds_step(state: NDSState, x_new: float, xdot_new: float = 0.0) -> tuple[NDSState, float]:
    u = state.drive(_check_finite(x_new), _check_finite(xdot_new))
    ds, out = ds_step(state.ds, u)
    return replace(state, ds=ds), out

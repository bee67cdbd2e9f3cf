"""Sampled input/output records: CSV I/O, rate estimation, scaling, segmentation
and excitation synthesis."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

__all__ = [
    "CSVFormatError",
    "ScaleMap",
    "SegmentIndex",
    "TimeSeriesPair",
    "apply_scaling",
    "concatenate",
    "denormalize",
    "estimate_rate",
    "load_csv",
    "make_signal",
    "monotone_segments",
    "normalize",
    "save_csv",
    "split",
]


class CSVFormatError(ValueError):
    """Raised when a dataset file does not follow the ``t,x[,y][,xdot]`` layout.

    ``row`` is the 1-based data row (0 for the header), ``column`` the column name.
    """

    def __init__(self, message: str, row: Optional[int] = None, column: Optional[str] = None):
        super().__init__(message)
        self.row = row
        self.column = column


@dataclass(frozen=True)
class TimeSeriesPair:
    """Input record ``x(t)`` with optional measured output ``y`` and rate ``xdot``."""

    t: np.ndarray
    x: np.ndarray
    y: Optional[np.ndarray] = None
    xdot: Optional[np.ndarray] = None

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        x = np.asarray(self.x, dtype=float)
        if t.ndim != 1 or x.shape != t.shape:
            raise ValueError("t and x must be 1-D arrays of equal length")
        if t.size < 2:
            raise ValueError("a series needs at least 2 samples")
        if not np.all(np.diff(t) > 0):
            raise ValueError("t must be strictly increasing")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "x", x)
        for name in ("y", "xdot"):
            v = getattr(self, name)
            if v is not None:
                v = np.asarray(v, dtype=float)
                if v.shape != t.shape:
                    raise ValueError(f"{name} must have the same length as t")
                object.__setattr__(self, name, v)

    def __len__(self) -> int:
        return self.t.size

    def with_output(self, y) -> "TimeSeriesPair":
        return replace(self, y=np.asarray(y, dtype=float))


@dataclass(frozen=True)
class ScaleMap:
    """Affine map ``normalized = (value - offset) / gain``."""

    offset: float = 0.0
    gain: float = 1.0

    def __post_init__(self):
        if not (self.gain > 0 and math.isfinite(self.gain)):
            raise ValueError(f"gain must be positive and finite, got {self.gain}")

    @classmethod
    def fit(cls, values) -> "ScaleMap":
        v = np.asarray(values, dtype=float)
        lo, hi = float(v.min()), float(v.max())
        if hi == lo:
            return cls(offset=lo, gain=1.0)
        return cls(offset=0.5 * (hi + lo), gain=0.5 * (hi - lo))

    def apply(self, values):
        return (np.asarray(values, dtype=float) - self.offset) / self.gain

    def unapply(self, values):
        return np.asarray(values, dtype=float) * self.gain + self.offset

    def to_dict(self) -> dict:
        return {"offset": self.offset, "gain": self.gain}

    @classmethod
    def from_dict(cls, d: Mapping) -> "ScaleMap":
        return cls(offset=float(d["offset"]), gain=float(d["gain"]))


@dataclass(frozen=True)
class SegmentIndex:
    breakpoints: np.ndarray

    def segments(self):
        b = self.breakpoints
        return list(zip(b[:-1].tolist(), b[1:].tolist()))


_COLUMNS = ("t", "x", "y", "xdot")


def load_csv(path) -> TimeSeriesPair:
    """Read a ``t,x[,y][,xdot]`` CSV file.

    Lines starting with ``#`` are skipped. Rows are checked for increasing
    time but never re-sorted.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(line for line in fh if not line.startswith("#"))
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise CSVFormatError(f"{path}: empty file", row=0) from None
        for required in ("t", "x"):
            if required not in header:
                raise CSVFormatError(f"{path}: missing column '{required}'", row=0, column=required)
        unknown = [h for h in header if h not in _COLUMNS]
        if unknown:
            raise CSVFormatError(f"{path}: unknown column '{unknown[0]}'", row=0, column=unknown[0])
        cols = {h: [] for h in header}
        for row_no, row in enumerate(reader, start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise CSVFormatError(
                    f"{path}: row {row_no} has {len(row)} fields, expected {len(header)}", row=row_no
                )
            for name, cell in zip(header, row):
                try:
                    value = float(cell)
                except ValueError:
                    raise CSVFormatError(
                        f"{path}: non-numeric value {cell!r} at row {row_no}, column '{name}'",
                        row=row_no,
                        column=name,
                    ) from None
                if not math.isfinite(value):
                    raise CSVFormatError(
                        f"{path}: non-finite value at row {row_no}, column '{name}'",
                        row=row_no,
                        column=name,
                    )
                cols[name].append(value)
            if row_no > 1 and cols["t"][-1] <= cols["t"][-2]:
                raise CSVFormatError(f"non-increasing timestamp at row {row_no}", row=row_no, column="t")
    n = len(cols["t"])
    if n < 2:
        raise CSVFormatError(f"{path}: need at least 2 data rows, found {n}", row=n)
    return TimeSeriesPair(
        t=np.array(cols["t"]),
        x=np.array(cols["x"]),
        y=np.array(cols["y"]) if "y" in cols else None,
        xdot=np.array(cols["xdot"]) if "xdot" in cols else None,
    )


def save_csv(series: TimeSeriesPair, path, include_xdot: bool = False, comments: Sequence[str] = ()) -> None:
    """Write a series using shortest round-trip float formatting.

    ``comments`` become leading ``# `` lines.
    """
    header = ["t", "x"]
    columns = [series.t, series.x]
    if series.y is not None:
        header.append("y")
        columns.append(series.y)
    if include_xdot:
        if series.xdot is None:
            raise ValueError("series has no xdot channel to write")
        header.append("xdot")
        columns.append(series.xdot)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        for line in comments:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in zip(*columns):
            w.writerow([repr(float(v)) for v in row])


def estimate_rate(series: TimeSeriesPair) -> TimeSeriesPair:
    """Fill ``xdot`` by central differences, one-sided at both ends."""
    t, x = series.t, series.x
    xdot = np.empty_like(x)
    xdot[1:-1] = (x[2:] - x[:-2]) / (t[2:] - t[:-2])
    xdot[0] = (x[1] - x[0]) / (t[1] - t[0])
    xdot[-1] = (x[-1] - x[-2]) / (t[-1] - t[-2])
    return replace(series, xdot=xdot)


def normalize(series: TimeSeriesPair) -> tuple[TimeSeriesPair, dict[str, ScaleMap]]:
    """Map ``x`` and ``y`` affinely onto [-1, 1].

    The rate channel is divided by the ``x`` gain; time is left untouched.
    Returns the scaled series and the per-channel maps (keys ``"x"`` and,
    when targets exist, ``"y"``).
    """
    maps = {"x": ScaleMap.fit(series.x)}
    if series.y is not None:
        maps["y"] = ScaleMap.fit(series.y)
    return apply_scaling(series, maps), maps


def apply_scaling(series: TimeSeriesPair, maps: Mapping[str, ScaleMap]) -> TimeSeriesPair:
    mx = maps["x"]
    y = series.y
    if y is not None and "y" in maps:
        y = maps["y"].apply(y)
    xdot = None if series.xdot is None else series.xdot / mx.gain
    return TimeSeriesPair(t=series.t, x=mx.apply(series.x), y=y, xdot=xdot)


def denormalize(series: TimeSeriesPair, maps: Mapping[str, ScaleMap]) -> TimeSeriesPair:
    mx = maps["x"]
    y = series.y
    if y is not None and "y" in maps:
        y = maps["y"].unapply(y)
    xdot = None if series.xdot is None else series.xdot * mx.gain
    return TimeSeriesPair(t=series.t, x=mx.unapply(series.x), y=y, xdot=xdot)


def monotone_segments(series: TimeSeriesPair | np.ndarray) -> SegmentIndex:
    """Indices where the input reverses direction, plus both end points.

    Zero increments (plateaus) keep the current direction, so a plateau is
    attached to the segment that precedes it.
    """
    x = series.x if isinstance(series, TimeSeriesPair) else np.asarray(series, dtype=float)
    d = np.sign(np.diff(x))
    nz = np.flatnonzero(d)
    if nz.size:
        flips = nz[1:][d[nz[1:]] != d[nz[:-1]]]
    else:
        flips = nz
    bp = np.concatenate(([0], flips, [x.size - 1])).astype(int)
    return SegmentIndex(np.unique(bp))


def split(series: TimeSeriesPair, fraction: float) -> tuple[TimeSeriesPair, TimeSeriesPair]:
    """Contiguous prefix/suffix split; stateful sequences are never shuffled."""
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"split fraction must lie in (0, 1), got {fraction}")
    n = len(series)
    k = int(math.floor(fraction * n + 0.5))
    if k < 2 or n - k < 2:
        raise ValueError(f"split of {n} samples at {fraction} leaves a part with fewer than 2 samples")
    return _slice(series, 0, k), _slice(series, k, n)


def _slice(series: TimeSeriesPair, a: int, b: int) -> TimeSeriesPair:
    return TimeSeriesPair(
        t=series.t[a:b],
        x=series.x[a:b],
        y=None if series.y is None else series.y[a:b],
        xdot=None if series.xdot is None else series.xdot[a:b],
    )


def concatenate(parts: Sequence[TimeSeriesPair]) -> TimeSeriesPair:
    """Join records end to end.

    A part whose clock does not continue past the previous one (separate
    recordings each starting at t=0, say) is shifted to begin one sample step
    after the previous part ends.
    """
    times = [parts[0].t]
    for p in parts[1:]:
        prev = times[-1]
        t = p.t
        if t[0] <= prev[-1]:
            step = prev[-1] - prev[-2] if prev.size > 1 else 1.0
            t = t - t[0] + prev[-1] + step
        times.append(t)

    def cat(name):
        vals = [getattr(p, name) for p in parts]
        if any(v is None for v in vals):
            return None
        return np.concatenate(vals)

    return TimeSeriesPair(t=np.concatenate(times), x=cat("x"), y=cat("y"), xdot=cat("xdot"))


# --- excitation synthesis -------------------------------------------------

_SIGNAL_KINDS = ("triangle", "sine", "multisine", "damped-triangle", "from-csv")


def _time_grid(duration: float, sample_rate: float) -> np.ndarray:
    if not duration > 0:
        raise ValueError("signal.duration must be > 0")
    if not sample_rate > 0:
        raise ValueError("signal.sample_rate must be > 0")
    n = int(round(duration * sample_rate)) + 1
    if n < 2:
        raise ValueError("signal.duration * signal.sample_rate yields fewer than 2 samples")
    return np.arange(n) / sample_rate


def _triangle(phase: np.ndarray) -> np.ndarray:
    # unit-amplitude triangle starting at 0 and rising, period 1 in phase
    p = np.mod(phase + 0.25, 1.0)
    return 1.0 - 4.0 * np.abs(p - 0.5)


def make_signal(descriptor: Mapping, base_dir=None) -> TimeSeriesPair:
    """Build an excitation record from a descriptor mapping.

    Supported ``kind`` values:

    - ``triangle`` / ``sine``: ``amplitude``, ``frequency``, ``duration``,
      ``sample_rate``, optional ``offset``.
    - ``damped-triangle``: triangle whose amplitude decays linearly from
      ``amplitude`` to ``amplitude * final_ratio``.
    - ``multisine``: consecutive sine bursts, one per entry of
      ``frequencies`` (``cycles`` periods each). Sampling is either the fixed
      ``sample_rate`` or ``points_per_cycle`` samples per period.
    - ``from-csv``: ``path`` to a ``t,x`` file.
    """
    kind = descriptor.get("kind")
    if kind not in _SIGNAL_KINDS:
        raise ValueError(f"signal.kind must be one of {_SIGNAL_KINDS}, got {kind!r}")
    if kind == "from-csv":
        p = Path(descriptor["path"])
        if base_dir is not None and not p.is_absolute():
            p = Path(base_dir) / p
        s = load_csv(p)
        return TimeSeriesPair(t=s.t, x=s.x)

    amplitude = float(descriptor.get("amplitude", 1.0))
    offset = float(descriptor.get("offset", 0.0))
    if kind == "multisine":
        return _multisine(descriptor, amplitude, offset)

    f = float(descriptor.get("frequency", 1.0))
    if not f > 0:
        raise ValueError("signal.frequency must be > 0")
    t = _time_grid(float(descriptor.get("duration", 0.0)), float(descriptor.get("sample_rate", 0.0)))
    if kind == "sine":
        x = amplitude * np.sin(2 * np.pi * f * t)
    elif kind == "triangle":
        x = amplitude * _triangle(f * t)
    else:
        ratio = float(descriptor.get("final_ratio", 0.2))
        env = amplitude * (1.0 + (ratio - 1.0) * t / t[-1])
        x = env * _triangle(f * t)
    return TimeSeriesPair(t=t, x=x + offset)


def _multisine(descriptor: Mapping, amplitude: float, offset: float) -> TimeSeriesPair:
    freqs = [float(f) for f in descriptor.get("frequencies", ())]
    if not freqs or any(not f > 0 for f in freqs):
        raise ValueError("signal.frequencies must be a non-empty list of positive values")
    cycles = float(descriptor.get("cycles", 2))
    if not cycles > 0:
        raise ValueError("signal.cycles must be > 0")
    amps = descriptor.get("amplitudes")
    amps = [amplitude] * len(freqs) if amps is None else [float(a) for a in amps]
    if len(amps) != len(freqs):
        raise ValueError("signal.amplitudes must match signal.frequencies in length")
    ppc = descriptor.get("points_per_cycle")
    fs = descriptor.get("sample_rate")
    if (ppc is None) == (fs is None):
        raise ValueError("multisine needs exactly one of signal.points_per_cycle or signal.sample_rate")
    ts, xs = [], []
    t0 = 0.0
    for f, a in zip(freqs, amps):
        dur = cycles / f
        dt = 1.0 / (f * float(ppc)) if ppc is not None else 1.0 / float(fs)
        n = int(round(dur / dt))
        if n < 2:
            raise ValueError(f"burst at {f} Hz has fewer than 2 samples")
        k = np.arange(n)
        ts.append(t0 + k * dt)
        xs.append(a * np.sin(2 * np.pi * f * k * dt))
        t0 += n * dt
    ts.append(np.array([t0]))
    xs.append(np.array([0.0]))
    return TimeSeriesPair(t=np.concatenate(ts), x=np.concatenate(xs) + offset)

"""CSV ingestion, normalisation, windowing, splitting and synthetic series."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class DataError(ValueError):
    pass


class ParseError(DataError):
    def __init__(self, path, line: int, message: str):
        super().__init__(f"{path}:{line}: {message}")
        self.path = str(path)
        self.line = line


@dataclass
class TimeSeries:
    values: np.ndarray  # (T, d)
    columns: list[str] = field(default_factory=list)
    timestamps: list[str] | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim == 1:
            self.values = self.values[:, None]
        if self.values.ndim != 2 or self.values.shape[0] < 1:
            raise DataError(f"series must be (T>=1, d), got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise DataError("series contains non-finite values")
        if not self.columns:
            self.columns = [f"x{i}" for i in range(self.values.shape[1])]
        if len(self.columns) != self.values.shape[1]:
            raise DataError(f"{len(self.columns)} column names for {self.values.shape[1]} columns")
        if self.timestamps is not None and len(self.timestamps) != self.values.shape[0]:
            raise DataError("timestamps length differs from series length")

    @property
    def length(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def slice(self, start: int, stop: int) -> TimeSeries:
        ts = None if self.timestamps is None else self.timestamps[start:stop]
        return TimeSeries(self.values[start:stop].copy(), list(self.columns), ts)


def load_csv(path, impute: str = "reject", time_column: str | None = None, columns: list[str] | None = None) -> TimeSeries:
    """Read a header-first CSV of reals, one row per time step.

    ``impute="ffill"`` replaces NaN/inf cells with the previous row's value;
    the default rejects such rows with a parse error.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"data file not found: {path}")
    if impute not in ("reject", "ffill"):
        raise ValueError(f"unknown impute mode {impute!r}")
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or not any(cell.strip() for cell in rows[0]):
        raise DataError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    time_idx = None
    if time_column is not None:
        if time_column not in header:
            raise DataError(f"{path}: time column {time_column!r} not in header")
        time_idx = header.index(time_column)
    value_idx = [i for i in range(len(header)) if i != time_idx]
    if columns is not None:
        missing = [c for c in columns if c not in header]
        if missing:
            raise DataError(f"{path}: columns not found: {missing}")
        value_idx = [header.index(c) for c in columns]
    values, stamps = [], []
    prev = None
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or not any(cell.strip() for cell in row):
            continue
        if len(row) != len(header):
            raise ParseError(path, lineno, f"expected {len(header)} fields, got {len(row)}")
        parsed = []
        for i in value_idx:
            try:
                parsed.append(float(row[i]))
            except ValueError:
                raise ParseError(path, lineno, f"non-numeric value {row[i]!r} in column {header[i]!r}") from None
        parsed = np.array(parsed)
        bad = ~np.isfinite(parsed)
        if bad.any():
            if impute == "reject":
                raise ParseError(path, lineno, "non-finite value")
            if prev is None:
                raise ParseError(path, lineno, "cannot forward-fill the first data row")
            parsed[bad] = prev[bad]
        prev = parsed
        values.append(parsed)
        if time_idx is not None:
            stamps.append(row[time_idx])
    if not values:
        raise DataError(f"{path}: no data rows")
    return TimeSeries(np.array(values), [header[i] for i in value_idx], stamps if time_idx is not None else None)


def write_csv(series: TimeSeries, path):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(series.columns)
        for row in series.values:
            w.writerow([repr(float(v)) for v in row])


def load_dataset(path, **kwargs) -> list[TimeSeries]:
    """One series from a CSV file, or one per ``*.csv`` file (sorted) in a directory."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"data path not found: {path}")
    if path.is_dir():
        files = sorted(path.glob("*.csv"))
        if not files:
            raise DataError(f"{path}: directory has no CSV files")
        return [load_csv(f, **kwargs) for f in files]
    return [load_csv(path, **kwargs)]


@dataclass
class NormStats:
    mean: np.ndarray
    std: np.ndarray
    constant: np.ndarray  # bool per dimension; those pass through unchanged

    def apply(self, values):
        values = np.asarray(values, dtype=np.float64)
        out = (values - self.mean) / self.std
        return np.where(self.constant, values, out)

    def invert(self, values):
        values = np.asarray(values, dtype=np.float64)
        out = values * self.std + self.mean
        return np.where(self.constant, values, out)

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist(), "constant": self.constant.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> NormStats:
        return cls(np.array(d["mean"], dtype=np.float64), np.array(d["std"], dtype=np.float64), np.array(d["constant"], dtype=bool))

    @classmethod
    def identity(cls, dim: int) -> NormStats:
        return cls(np.zeros(dim), np.ones(dim), np.zeros(dim, dtype=bool))


def zscore_fit(train: TimeSeries | list[TimeSeries]) -> NormStats:
    series = train if isinstance(train, list) else [train]
    values = np.concatenate([s.values for s in series])
    mean = values.mean(axis=0)
    std = values.std(axis=0)
    constant = std <= 1e-12 * np.maximum(1.0, np.abs(mean))
    return NormStats(mean, np.where(constant, 1.0, std), constant)


def zscore_fit_apply(train: TimeSeries, others: list[TimeSeries] = ()) -> tuple[TimeSeries, list[TimeSeries], NormStats]:
    stats = zscore_fit(train)

    def norm(s: TimeSeries) -> TimeSeries:
        return TimeSeries(stats.apply(s.values), list(s.columns), s.timestamps)

    return norm(train), [norm(s) for s in others], stats


@dataclass(frozen=True)
class WindowSpec:
    window: int
    horizon: int
    stride: int = 1

    def __post_init__(self):
        for name in ("window", "horizon", "stride"):
            if getattr(self, name) < 1:
                raise ValueError(f"WindowSpec.{name} must be >= 1")

    @property
    def span(self) -> int:
        return self.window + self.horizon


def window_count(length: int, spec: WindowSpec) -> int:
    if length < spec.span:
        return 0
    return (length - spec.span) // spec.stride + 1


def window_offsets(length: int, spec: WindowSpec) -> np.ndarray:
    n = window_count(length, spec)
    if n == 0:
        raise DataError(f"series of length {length} is shorter than window+horizon={spec.span}")
    return np.arange(n) * spec.stride


def sliding_windows(series: TimeSeries | np.ndarray, spec: WindowSpec) -> list[tuple[np.ndarray, np.ndarray]]:
    """(observed, future) pairs at offsets 0, stride, 2*stride, ..."""
    values = series.values if isinstance(series, TimeSeries) else np.asarray(series, dtype=np.float64)
    return [(values[o : o + spec.window], values[o + spec.window : o + spec.span]) for o in window_offsets(len(values), spec)]


def window_array(series_list, spec: WindowSpec) -> np.ndarray:
    """Stack full (window + horizon) spans from one or several series: (M, span, d)."""
    if isinstance(series_list, (TimeSeries, np.ndarray)):
        series_list = [series_list]
    spans = []
    for s in series_list:
        values = s.values if isinstance(s, TimeSeries) else np.asarray(s, dtype=np.float64)
        spans.extend(values[o : o + spec.span] for o in window_offsets(len(values), spec))
    return np.stack(spans)


def split_temporal(series: TimeSeries, fraction: float) -> tuple[TimeSeries, TimeSeries]:
    if not 0 < fraction < 1:
        raise ValueError("split fraction must lie in (0, 1)")
    cut = int(math.floor(fraction * series.length))
    if cut < 1 or cut >= series.length:
        raise DataError(f"split at {cut} leaves an empty side (T={series.length})")
    return series.slice(0, cut), series.slice(cut, series.length)


def split_subjects(series: list[TimeSeries], fraction: float, seed: int = 0) -> tuple[list[TimeSeries], list[TimeSeries]]:
    if not 0 < fraction < 1:
        raise ValueError("split fraction must lie in (0, 1)")
    n_train = int(math.floor(fraction * len(series)))
    if n_train < 1 or n_train >= len(series):
        raise DataError(f"subject split of {len(series)} series at {fraction} leaves an empty side")
    order = np.random.default_rng(seed).permutation(len(series))
    return [series[i] for i in sorted(order[:n_train])], [series[i] for i in sorted(order[n_train:])]


def split(data, fraction: float = 0.7, seed: int = 0):
    """Temporal split for one series, subject-level split for a list of series."""
    if isinstance(data, TimeSeries):
        return split_temporal(data, fraction)
    if len(data) == 1:
        train, test = split_temporal(data[0], fraction)
        return [train], [test]
    return split_subjects(list(data), fraction, seed)


# -- synthetic generators -------------------------------------------------

SYNTH_DEFAULTS = {
    "sine_noise": {"length": 1000, "dim": 1, "period": 25.0, "noise": 0.1, "amplitude": 1.0, "offset": 0.0},
    "regime_ar": {
        "length": 2000,
        "dim": 4,
        "phi": [0.9, 0.5],
        "noise": [0.3, 1.0],
        "switch_prob": 0.02,
        "level": 5.0,
        "coupling": 0.3,
    },
    "drop_signal": {
        "length": 1000,
        "level": 1.0,
        "noise": 0.01,
        "depth": 0.4,
        "drop_times": [],
        "interval": 0,
        "jitter": 0,
        "precursor": 0,
        "precursor_depth": 0.1,
        "recovery": 30,
    },
}


def synth_generate(kind: str, params: dict | None = None, seed: int = 0) -> TimeSeries:
    if kind not in SYNTH_DEFAULTS:
        raise ValueError(f"unknown synthetic kind {kind!r}; expected one of {sorted(SYNTH_DEFAULTS)}")
    p = dict(SYNTH_DEFAULTS[kind])
    unknown = set(params or {}) - set(p)
    if unknown:
        raise ValueError(f"unknown {kind} parameters: {sorted(unknown)}")
    p.update(params or {})
    if int(p["length"]) < 2:
        raise ValueError("length must be >= 2")
    rng = np.random.default_rng(seed)
    return {"sine_noise": _sine_noise, "regime_ar": _regime_ar, "drop_signal": _drop_signal}[kind](p, rng)


def _sine_noise(p, rng) -> TimeSeries:
    T, d = int(p["length"]), int(p["dim"])
    if p["period"] <= 0 or p["noise"] < 0:
        raise ValueError("sine_noise needs period > 0 and noise >= 0")
    t = np.arange(T)[:, None]
    phase = 2 * np.pi * np.arange(d)[None, :] / max(d, 1)
    values = p["offset"] + p["amplitude"] * np.sin(2 * np.pi * t / p["period"] + phase)
    values = values + p["noise"] * rng.standard_normal((T, d))
    return TimeSeries(values)


def _regime_ar(p, rng) -> TimeSeries:
    """AR(1) around ``level`` whose coefficient and noise scale follow a hidden
    two-state Markov chain; ``coupling`` mixes in the cross-channel mean."""
    T, d = int(p["length"]), int(p["dim"])
    phi, noise = np.asarray(p["phi"], float), np.asarray(p["noise"], float)
    if phi.shape != noise.shape or phi.size < 1 or np.any(np.abs(phi) >= 1) or np.any(noise <= 0):
        raise ValueError("regime_ar needs matching phi/noise lists with |phi| < 1 and noise > 0")
    if not 0 <= p["switch_prob"] <= 1:
        raise ValueError("switch_prob must lie in [0, 1]")
    k = phi.size
    regime = 0
    dev = np.zeros(d)
    values = np.empty((T, d))
    c = float(p["coupling"])
    for t in range(T):
        if rng.random() < p["switch_prob"]:
            regime = (regime + 1 + rng.integers(k - 1)) % k if k > 1 else 0
        mixed = (1 - c) * dev + c * dev.mean()
        dev = phi[regime] * mixed + noise[regime] * rng.standard_normal(d)
        values[t] = p["level"] + dev
    return TimeSeries(values)


def drop_times(p: dict, rng: np.random.Generator) -> list[int]:
    if p["drop_times"]:
        return sorted(int(t) for t in p["drop_times"])
    interval = int(p["interval"])
    if interval <= 0:
        return []
    times, t = [], interval
    while t < int(p["length"]) - 1:
        times.append(t)
        t += interval + (int(rng.integers(-p["jitter"], p["jitter"] + 1)) if p["jitter"] else 0)
    return times


def _drop_signal(p, rng) -> TimeSeries:
    """Positive amplitude around ``level`` with sudden relative drops.

    A drop at index t makes ``a[t+1] <= (1 - depth) * a[t]``; the level then
    recovers linearly over ``recovery`` steps. An optional ``precursor``
    ramp lowers the level by ``precursor_depth`` over the steps before t.
    """
    T = int(p["length"])
    if not (0 < p["depth"] < 1) or p["level"] <= 0 or p["noise"] < 0:
        raise ValueError("drop_signal needs 0 < depth < 1, level > 0, noise >= 0")
    times = drop_times(p, rng)
    if any(t < 0 or t >= T - 1 for t in times):
        raise ValueError(f"drop times must lie in [0, {T - 2}]")
    level = np.full(T, float(p["level"]))
    pre, rec = int(p["precursor"]), max(int(p["recovery"]), 1)
    for t in times:
        if pre:
            lo = max(0, t - pre + 1)
            ramp = np.linspace(1.0, 1.0 - p["precursor_depth"], t - lo + 2)[1:]
            level[lo : t + 1] *= ramp
        base = level[t] * (1 - p["depth"])
        stop = min(T, t + 1 + rec)
        level[t + 1 : stop] = base + (p["level"] - base) * np.arange(stop - t - 1) / rec
    amp = level * np.exp(p["noise"] * rng.standard_normal(T))
    for t in times:
        amp[t + 1] = min(amp[t + 1], amp[t] * (1 - p["depth"]))
    return TimeSeries(amp[:, None], ["amplitude"])


def injected_drops(params: dict | None = None, seed: int = 0) -> list[int]:
    """Drop indices used by ``synth_generate("drop_signal", params, seed)``."""
    p = dict(SYNTH_DEFAULTS["drop_signal"])
    p.update(params or {})
    return drop_times(p, np.random.default_rng(seed))

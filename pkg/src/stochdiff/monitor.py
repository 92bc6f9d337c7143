"""Streaming replay that forecasts ahead and raises relative-drop alerts."""

from __future__ import annotations

from collections.abc import Callable
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import NormStats, TimeSeries, WindowSpec
from .forecasting import condition_on_history, forecast
from .model import StochDiffModel
from .point import median_forecast, pointwise_forecast

DEFAULT_THRESHOLD = 0.30
AMPLITUDE_FLOOR = 1e-12


class LookAheadError(AssertionError):
    pass


@dataclass
class DropAlert:
    issue_step: int
    target_step: int
    drop: float
    reference: float

    @property
    def horizon_ahead(self) -> int:
        return self.target_step - self.issue_step


@dataclass
class TraceRecord:
    issue_step: int
    observed_start: int
    observed_stop: int
    point: list[float]
    lower: list[float]
    upper: list[float]


@dataclass
class DropEvent:
    start: int
    end: int
    max_drop: float
    detected: bool = False
    first_issue_step: int | None = None
    lead_time: int | None = None


@dataclass
class StreamResult:
    alerts: list[DropAlert]
    trace: list[TraceRecord]
    reads: dict[int, int] = field(default_factory=dict)  # issue step -> max index read


def _reference(a: np.ndarray, t: int, window: int | None) -> float:
    lo = 0 if window is None else max(0, t - window)
    return float(np.max(a[lo:t]))


def _dropped(value: float, ref: float, threshold: float) -> bool:
    # multiplicative form keeps a drop of exactly the threshold unflagged;
    # (ref - value) / ref rounds 1 -> 0.7 up to 0.30000000000000004
    return value < (1.0 - threshold) * ref


def detect_drops(amplitude, threshold: float = DEFAULT_THRESHOLD, window: int | None = None) -> list[tuple[int, float]]:
    """Steps whose amplitude sits more than ``threshold`` below the trailing max.

    The reference at step t is the maximum of the ``window`` values before t
    (all earlier values when ``window`` is None). The comparison is strict.
    """
    a = np.asarray(amplitude, dtype=np.float64).ravel()
    if np.any(a <= 0):
        raise ValueError("amplitudes must be strictly positive")
    flags = []
    for t in range(1, a.size):
        ref = _reference(a, t, window)
        if _dropped(a[t], ref, threshold):
            flags.append((t, float((ref - a[t]) / ref)))
    return flags


def group_events(flags: list[tuple[int, float]]) -> list[DropEvent]:
    """Merge runs of consecutive flagged steps into events."""
    events: list[DropEvent] = []
    for t, frac in flags:
        if events and t == events[-1].end + 1:
            events[-1].end = t
            events[-1].max_drop = max(events[-1].max_drop, frac)
        else:
            events.append(DropEvent(t, t, frac))
    return events


class CausalView:
    """Read-only access to a series that records the furthest index read per issue step."""

    def __init__(self, values: np.ndarray):
        self._values = values
        self.reads: dict[int, int] = {}

    def __len__(self):
        return len(self._values)

    def read(self, start: int, stop: int, issue_step: int) -> np.ndarray:
        if stop - 1 > issue_step:
            raise LookAheadError(f"read up to index {stop - 1} at issue step {issue_step}")
        self.reads[issue_step] = max(self.reads.get(issue_step, -1), stop - 1)
        return self._values[start:stop].copy()


Forecaster = Callable[[np.ndarray, int, int], np.ndarray]


class ModelForecaster:
    """Forecasts raw-scale ensembles (S, H, d) from a trained model."""

    def __init__(self, model: StochDiffModel, stats: NormStats, n_samples: int = 100, seed: int = 0):
        self.model = model
        self.stats = stats
        self.n_samples = n_samples
        self.seed = seed

    def __call__(self, observed: np.ndarray, issue_step: int, horizon: int) -> np.ndarray:
        hist = self.stats.apply(observed)
        ctx = condition_on_history(hist, self.model, self.seed, window_ids=[issue_step])
        ens = forecast(ctx, horizon, self.n_samples, self.model, self.seed, window_id=issue_step)
        return self.stats.invert(ens.samples)


class OracleForecaster:
    """Returns the true continuation; used to check the alerting plumbing."""

    def __init__(self, values: np.ndarray):
        self._truth = np.asarray(values, dtype=np.float64)

    def __call__(self, observed: np.ndarray, issue_step: int, horizon: int) -> np.ndarray:
        return self._truth[None, issue_step + 1 : issue_step + 1 + horizon].copy()


def simulate_stream(
    forecaster: Forecaster,
    series: TimeSeries,
    spec: WindowSpec,
    threshold: float = DEFAULT_THRESHOLD,
    point_mode: str = "gmm",
    channel: int = 0,
) -> StreamResult:
    """Replay ``series`` position by position, forecasting ``spec.horizon`` ahead.

    At each position the forecaster sees only the trailing ``spec.window``
    rows. Predicted amplitudes are compared with the trailing maximum of the
    observed-then-predicted sequence; one alert is kept per target step,
    the earliest issued.
    """
    if point_mode not in ("gmm", "median"):
        raise ValueError(f"unknown point mode {point_mode!r}")
    if forecaster is None:
        raise ValueError("simulate_stream needs a trained model or an oracle forecaster")
    values = series.values
    T = len(values)
    W = spec.window
    if T <= W:
        raise ValueError(f"series of length {T} is too short for a window of {W}")
    view = CausalView(values)
    alerts: dict[int, DropAlert] = {}
    trace: list[TraceRecord] = []
    for k in range(W, T, spec.stride):
        issue = k - 1
        observed = view.read(k - W, k, issue)
        horizon = min(spec.horizon, T - k)
        ens = np.asarray(forecaster(observed, issue, horizon), dtype=np.float64)
        point = pointwise_forecast(ens) if point_mode == "gmm" else median_forecast(ens)
        lower, upper = np.quantile(ens[:, :, channel], [0.05, 0.95], axis=0)
        pred = np.maximum(point[:, channel], AMPLITUDE_FLOOR)
        combined = np.concatenate([observed[:, channel], pred])
        for j in range(horizon):
            idx = W + j
            ref = float(np.max(combined[idx - W : idx]))
            frac = (ref - combined[idx]) / ref
            target = k + j
            if _dropped(combined[idx], ref, threshold) and target not in alerts:
                alerts[target] = DropAlert(issue, target, float(frac), ref)
        trace.append(TraceRecord(issue, k - W, k, pred.tolist(), lower.tolist(), upper.tolist()))
    for issue, furthest in view.reads.items():
        if furthest > issue:
            raise LookAheadError(f"index {furthest} read at issue step {issue}")
    ordered = sorted(alerts.values(), key=lambda a: (a.target_step, a.issue_step))
    return StreamResult(ordered, trace, dict(view.reads))


def summarize(alerts: list[DropAlert], amplitude, threshold: float, window: int) -> list[DropEvent]:
    """Match alerts to ground-truth drop events reachable by the monitor.

    Lead time is the event's first flagged step minus the earliest issue
    step among alerts targeting the event; positive means the alert came
    before the drop was observable.
    """
    a = np.asarray(amplitude, dtype=np.float64).ravel()
    flags = [(t, f) for t, f in detect_drops(a, threshold, window) if t >= window]
    events = group_events(flags)
    for ev in events:
        hits = [al for al in alerts if ev.start <= al.target_step <= ev.end]
        if hits:
            ev.detected = True
            ev.first_issue_step = min(al.issue_step for al in hits)
            ev.lead_time = ev.start - ev.first_issue_step
    return events


def alert_records(alerts: list[DropAlert]) -> list[dict]:
    return [asdict(a) for a in alerts]

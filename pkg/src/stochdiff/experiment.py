"""Train/evaluate plumbing shared by the CLI and the acceptance suite."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .data import NormStats, TimeSeries, WindowSpec, split, window_array, window_offsets, zscore_fit
from .forecasting import forecast_windows
from .metrics import crps_sum_per_step
from .model import ModelConfig, StochDiffModel
from .point import pointwise_forecast
from .training import TrainConfig, TrainReport, train

log = logging.getLogger(__name__)


@dataclass
class PreparedData:
    train: list[TimeSeries]  # normalised
    test: list[TimeSeries]  # normalised
    stats: NormStats
    spec: WindowSpec

    def train_windows(self) -> np.ndarray:
        return window_array(self.train, self.spec)


def prepare(series: list[TimeSeries] | TimeSeries, spec: WindowSpec, fraction: float = 0.7, seed: int = 0, normalize: bool = True) -> PreparedData:
    series = [series] if isinstance(series, TimeSeries) else list(series)
    train_raw, test_raw = split(series, fraction, seed)
    stats = zscore_fit(train_raw) if normalize else NormStats.identity(series[0].dim)

    def norm(s: TimeSeries) -> TimeSeries:
        return TimeSeries(stats.apply(s.values), list(s.columns), s.timestamps)

    return PreparedData([norm(s) for s in train_raw], [norm(s) for s in test_raw], stats, spec)


def eval_windows(test: list[TimeSeries], spec: WindowSpec, stride: int | None = None):
    """Observed histories and true futures from the test side, (B, W, d) and (B, H, d)."""
    eval_spec = replace(spec, stride=stride or spec.horizon)
    hist, fut = [], []
    for s in test:
        for o in window_offsets(s.length, eval_spec):
            hist.append(s.values[o : o + spec.window])
            fut.append(s.values[o + spec.window : o + spec.span])
    return np.stack(hist), np.stack(fut)


@dataclass
class EvalResult:
    nrmse: float
    crps_sum: float
    persistence_nrmse: float
    n_windows: int
    n_samples: int
    points: np.ndarray = field(repr=False)
    ensembles: np.ndarray = field(repr=False)
    truth: np.ndarray = field(repr=False)


def _pooled_nrmse(pred: np.ndarray, truth: np.ndarray) -> float:
    return float(np.sqrt(np.mean((pred - truth) ** 2)) / np.mean(np.abs(truth)))


def evaluate_model(
    model: StochDiffModel,
    data: PreparedData,
    n_samples: int = 100,
    seed: int = 0,
    stride: int | None = None,
    chunk: int = 16,
) -> EvalResult:
    """Forecast every test window and score on the original scale.

    NRMSE pools squared errors and |truth| over all windows; CRPS_sum is the
    mean over windows and steps. Deterministic models are scored as a
    one-member ensemble, so their CRPS_sum is the absolute error of the sums.
    """
    hist, fut = eval_windows(data.test, data.spec, stride)
    S = 1 if model.is_deterministic else n_samples
    ens_parts = []
    for lo in range(0, len(hist), chunk):
        ens_parts.append(forecast_windows(hist[lo : lo + chunk], data.spec.horizon, S, model, seed, first_window_id=lo))
    ens = np.concatenate(ens_parts)
    ens = data.stats.invert(ens)
    truth = data.stats.invert(fut)
    last = data.stats.invert(hist[:, -1:, :])
    if S == 1:
        points = ens[:, 0]
    else:
        points = np.stack([pointwise_forecast(e) for e in ens])
    crps = np.mean([crps_sum_per_step(e, t).mean() for e, t in zip(ens, truth)])
    persistence = np.broadcast_to(last, truth.shape)
    return EvalResult(
        nrmse=_pooled_nrmse(points, truth),
        crps_sum=float(crps),
        persistence_nrmse=_pooled_nrmse(persistence, truth),
        n_windows=len(hist),
        n_samples=S,
        points=points,
        ensembles=ens,
        truth=truth,
    )


def fit(data: PreparedData, model_cfg: ModelConfig, train_cfg: TrainConfig, max_windows: int | None = None, on_epoch=None) -> tuple[StochDiffModel, TrainReport]:
    windows = data.train_windows()
    if max_windows is not None and len(windows) > max_windows:
        keep = np.linspace(0, len(windows) - 1, max_windows).round().astype(int)
        windows = windows[keep]
    cfg = replace(train_cfg, model=model_cfg)
    return train(windows, cfg, on_epoch=on_epoch)


@dataclass
class AblationRow:
    variant: str
    seed: int
    nrmse: float
    crps_sum: float | None
    crps_sum_degenerate: float | None
    persistence_nrmse: float
    final_loss: float


def run_ablation(
    data_for_seed,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    variants,
    seeds,
    n_samples: int = 100,
    max_windows: int | None = None,
    eval_stride: int | None = None,
) -> list[AblationRow]:
    """Train and score every (variant, seed) pair.

    ``data_for_seed(seed)`` returns the PreparedData for that seed, so all
    variants of one seed share identical data.
    """
    rows = []
    for seed in seeds:
        data = data_for_seed(seed)
        for variant in variants:
            mcfg = replace(model_cfg, variant=variant)
            tcfg = replace(train_cfg, seed=seed)
            model, report = fit(data, mcfg, tcfg, max_windows)
            res = evaluate_model(model, data, n_samples, seed, eval_stride)
            deterministic = model.is_deterministic
            rows.append(
                AblationRow(
                    variant=variant,
                    seed=seed,
                    nrmse=res.nrmse,
                    crps_sum=None if deterministic else res.crps_sum,
                    crps_sum_degenerate=res.crps_sum if deterministic else None,
                    persistence_nrmse=res.persistence_nrmse,
                    final_loss=report.epochs[-1].total if report.epochs else float("nan"),
                )
            )
            log.info("ablation %s seed=%d nrmse=%.4f crps=%.4f", variant, seed, res.nrmse, res.crps_sum)
    return rows


def ablation_table(rows: list[AblationRow], variants) -> list[dict]:
    table = []
    for v in variants:
        sel = [r for r in rows if r.variant == v]
        nr = np.array([r.nrmse for r in sel])
        cr = [r.crps_sum for r in sel if r.crps_sum is not None]
        table.append(
            {
                "variant": v,
                "nrmse_mean": float(nr.mean()),
                "nrmse_std": float(nr.std()),
                "crps_sum_mean": float(np.mean(cr)) if cr else None,
                "crps_sum_std": float(np.std(cr)) if cr else None,
                "n_seeds": len(sel),
            }
        )
    return table

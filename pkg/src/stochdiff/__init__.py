"""Probabilistic multivariate forecasting with a diffusion decoder conditioned
on a learned per-step latent prior."""

from .data import TimeSeries, WindowSpec, load_csv, sliding_windows, synth_generate
from .forecasting import ForecastEnsemble, condition_on_history, forecast, quantile_bands
from .metrics import crps_empirical, crps_sum, nrmse
from .model import VARIANTS, ModelConfig, StochDiffModel, build_model
from .point import fit_gmm, pointwise_forecast, select_point
from .schedule import DiffusionSchedule, GaussianDiag, build_schedule
from .training import TrainConfig, dual_loss, train

__version__ = "0.1.0"

__all__ = [
    "VARIANTS",
    "DiffusionSchedule",
    "ForecastEnsemble",
    "GaussianDiag",
    "ModelConfig",
    "StochDiffModel",
    "TimeSeries",
    "TrainConfig",
    "WindowSpec",
    "build_model",
    "build_schedule",
    "condition_on_history",
    "crps_empirical",
    "crps_sum",
    "dual_loss",
    "fit_gmm",
    "forecast",
    "load_csv",
    "nrmse",
    "pointwise_forecast",
    "quantile_bands",
    "select_point",
    "sliding_windows",
    "synth_generate",
    "train",
]

"""Observe-then-forecast autoregressive sampling.

Random streams are derived from one master seed with ``SeedSequence``
spawn keys: ``(0, window)`` for the observation phase and
``(1, window, sample)`` for each forecast sample. A sample's trajectory
therefore does not depend on how many other samples or windows are drawn
alongside it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .denoiser import predict_x0
from .latent import RecurrenceContext, posterior_params, prior_params, recurrence_update, reparam_project
from .model import StochDiffModel
from .nn import LSTMState, ShapeError, as_tensor
from .schedule import reverse_step


class EmptyEnsembleError(ValueError):
    pass


@dataclass
class ForecastEnsemble:
    samples: np.ndarray  # (S, H, d)
    t0: int
    seed: int

    def __post_init__(self):
        if self.samples.ndim != 3 or self.samples.shape[0] < 1:
            raise ValueError(f"ensemble must be (S>=1, H, d), got {self.samples.shape}")

    @property
    def n_samples(self) -> int:
        return self.samples.shape[0]

    @property
    def horizon(self) -> int:
        return self.samples.shape[1]


def observation_rng(seed: int, window_id: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(0, int(window_id))))


def sample_rng(seed: int, sample_id: int, window_id: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(1, int(window_id), int(sample_id))))


@torch.no_grad()
def condition_on_history(history, model: StochDiffModel, seed: int = 0, window_ids=None) -> RecurrenceContext:
    """Roll the recurrence over observed rows using posterior latents.

    ``history`` is (T, d) or a batch (B, T, d); the batch uses window ids
    ``0..B-1`` unless ``window_ids`` is given.
    """
    x = as_tensor(history)
    if x.ndim not in (2, 3):
        raise ShapeError(f"history must be (T, d) or (B, T, d), got {tuple(x.shape)}")
    if x.shape[-2] < 1:
        raise ValueError("history must contain at least one observation")
    if x.shape[-1] != model.cfg.data_dim:
        raise ShapeError(f"history width {x.shape[-1]} != model data_dim {model.cfg.data_dim}")
    rec = model.recurrence
    batched = x.ndim == 3
    n_windows = x.shape[0] if batched else 1
    ids = list(range(n_windows)) if window_ids is None else [int(w) for w in np.atleast_1d(window_ids)]
    if len(ids) != n_windows:
        raise ShapeError(f"{len(ids)} window ids for {n_windows} histories")
    T = x.shape[-2]
    latent = rec.latent_dim
    eps = np.stack([observation_rng(seed, w).standard_normal((T, latent)) for w in ids])
    if not batched:
        eps = eps[0]
    ctx = rec.initial_context(tuple(x.shape[:-2]))
    for t in range(T):
        x_t = x[..., t, :]
        if latent == 0:
            ctx = recurrence_update(ctx, x_t, None, rec)
            continue
        q = posterior_params(ctx, x_t, rec)
        z = reparam_project(q, as_tensor(eps[..., t, :]), rec)
        ctx = recurrence_update(ctx, x_t, z, rec)
    return ctx


def generate_step(model: StochDiffModel, ctx: RecurrenceContext, noise: torch.Tensor, add_noise: bool = True):
    """Sample one future step and advance the recurrence.

    ``noise`` holds ``model.generation_noise_width()`` standard normals per
    row: prior latent draw, then the reverse-chain start point, then the
    injection noise for steps N..2.
    """
    rec = model.recurrence
    cfg = model.cfg
    if model.variant == "lstm":
        x = model.decoder(ctx.state.h)
        return x, recurrence_update(ctx, x, None, rec)
    L, d = cfg.latent, cfg.data_dim
    z = reparam_project(prior_params(ctx, rec), noise[..., :L], rec, source="prior")
    cond = model.condition(z, ctx.state.h)
    if model.variant == "vlstm_standard_prior":
        out = model.decoder(cond)
        x = out.mean + torch.sqrt(out.var) * noise[..., L : L + d] if add_noise else out.mean
    else:
        sched = model.schedule
        N = sched.n_steps
        x = noise[..., L : L + d]
        for n in range(N, 0, -1):
            x0_hat = predict_x0(x, n, cond, model.decoder)
            if n > 1 and add_noise:
                off = L + d + (N - n) * d
                x = reverse_step(x, x0_hat, n, sched, noise[..., off : off + d], add_noise=True)
            else:
                x = reverse_step(x, x0_hat, n, sched)
    return x, recurrence_update(ctx, x, z, rec)


@torch.no_grad()
def _rollout(model, ctx: RecurrenceContext, horizon: int, streams: list[np.random.Generator], add_noise: bool):
    width = model.generation_noise_width()
    steps = []
    for _ in range(horizon):
        noise = as_tensor(np.stack([g.standard_normal(width) for g in streams]))
        x, ctx = generate_step(model, ctx, noise, add_noise=add_noise)
        steps.append(x)
    d = model.cfg.data_dim
    if not steps:
        return np.zeros((len(streams), 0, d))
    return torch.stack(steps, dim=1).numpy()


def forecast(
    ctx: RecurrenceContext,
    horizon: int,
    n_samples: int,
    model: StochDiffModel,
    seed: int = 0,
    window_id: int = 0,
    sample_ids=None,
    add_noise: bool = True,
) -> ForecastEnsemble:
    """Draw ``n_samples`` trajectories of ``horizon`` steps from one context."""
    if horizon < 0:
        raise ValueError("horizon must be >= 0")
    ids = list(range(n_samples)) if sample_ids is None else [int(s) for s in sample_ids]
    if len(ids) < 1:
        raise ValueError("need at least one sample")
    if ctx.state.h.ndim != 1:
        raise ShapeError("forecast expects an unbatched context; use forecast_windows for batches")
    streams = [sample_rng(seed, s, window_id) for s in ids]
    start = RecurrenceContext(_tile(ctx, len(ids)), ctx.step_index)
    samples = _rollout(model, start, horizon, streams, add_noise)
    return ForecastEnsemble(samples, t0=ctx.step_index, seed=int(seed))


def _tile(ctx: RecurrenceContext, k: int) -> LSTMState:
    return LSTMState(ctx.state.h.expand(k, -1).clone(), ctx.state.c.expand(k, -1).clone())


def forecast_windows(histories, horizon: int, n_samples: int, model: StochDiffModel, seed: int = 0, add_noise: bool = True, first_window_id: int = 0) -> np.ndarray:
    """Condition on each history in a (B, T, d) batch and sample; returns (B, S, H, d).

    Row ``b`` uses window id ``first_window_id + b`` and equals the
    single-window ``forecast`` run with that id.
    """
    x = np.asarray(histories, dtype=np.float64)
    ids = list(range(first_window_id, first_window_id + x.shape[0]))
    ctx = condition_on_history(x, model, seed, window_ids=ids)
    tiled = RecurrenceContext(ctx.state.repeat(n_samples), ctx.step_index)
    streams = [sample_rng(seed, s, w) for w in ids for s in range(n_samples)]
    out = _rollout(model, tiled, horizon, streams, add_noise)
    return out.reshape(x.shape[0], n_samples, horizon, model.cfg.data_dim)


def quantile_bands(ens: ForecastEnsemble | np.ndarray, levels) -> np.ndarray:
    """Empirical quantiles per (step, dim), shape (len(levels), H, d)."""
    samples = ens.samples if isinstance(ens, ForecastEnsemble) else np.asarray(ens, dtype=np.float64)
    if samples.shape[0] == 0:
        raise EmptyEnsembleError("cannot take quantiles of an empty ensemble")
    levels = np.asarray(levels, dtype=np.float64)
    if np.any((levels < 0) | (levels > 1)):
        raise ValueError("quantile levels must lie in [0, 1]")
    return np.quantile(samples, levels, axis=0, method="linear")

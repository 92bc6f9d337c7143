"""Step-wise training under the KL + reconstruction objective."""

from __future__ import annotations

import logging
import math
import time
from collections.abc import Callable
from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from .denoiser import predict_x0
from .latent import kl_diag, posterior_params, prior_params, recurrence_update, reparam_project
from .model import VARIANTS, ModelConfig, StochDiffModel, UnknownVariantError, build_model
from .nn import as_tensor
from .schedule import DiffusionSchedule, forward_sample

log = logging.getLogger(__name__)

LOG_2PI = math.log(2 * math.pi)


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainingNoise:
    """Pre-drawn randomness for one loss evaluation, shaped (..., T[, width])."""

    steps: np.ndarray
    eps: np.ndarray
    eps_latent: np.ndarray


def draw_training_noise(rng: np.random.Generator, shape: tuple[int, ...], model: StochDiffModel) -> TrainingNoise:
    """``shape`` is the window batch shape without the data axis, e.g. (B, T)."""
    cfg = model.cfg
    latent = 0 if cfg.variant == "lstm" else cfg.latent
    steps = rng.integers(1, cfg.n_steps + 1, size=shape)
    eps = rng.standard_normal((*shape, cfg.data_dim))
    eps_latent = rng.standard_normal((*shape, latent))
    return TrainingNoise(steps, eps, eps_latent)


def _prepare(window, model, rng, noise):
    x = as_tensor(window)
    if x.ndim < 2:
        raise ValueError(f"window must be (T, d) or (B, T, d), got shape {tuple(x.shape)}")
    if noise is None:
        if rng is None:
            raise ValueError("either rng or noise is required")
        noise = draw_training_noise(rng, tuple(x.shape[:-1]), model)
    return x, noise


def _finish(kl, recon, reduce):
    total = kl + recon
    if reduce:
        return total.sum(), kl.sum(), recon.sum()
    return total, kl, recon


def dual_loss(
    window,
    model: StochDiffModel,
    sched: DiffusionSchedule | None = None,
    rng: np.random.Generator | None = None,
    noise: TrainingNoise | None = None,
    reduce: bool = True,
):
    """KL + reconstruction objective accumulated over the time axis.

    Per step: draw a diffusion step and noise, encode the posterior latent,
    noise the observation, reconstruct it with the denoiser conditioned on
    the latent, then feed (x_t, z_t) to the recurrence. Returns
    ``(total, kl_term, recon_term)``; with ``reduce=False`` each is a
    per-window vector.
    """
    sched = sched or model.schedule
    x, noise = _prepare(window, model, rng, noise)
    rec = model.recurrence
    batch_shape = tuple(x.shape[:-2])
    ctx = rec.initial_context(batch_shape)
    kl = torch.zeros(batch_shape, dtype=x.dtype)
    recon = torch.zeros(batch_shape, dtype=x.dtype)
    for t in range(x.shape[-2]):
        x_t = x[..., t, :]
        n = noise.steps[..., t]
        q = posterior_params(ctx, x_t, rec)
        p = prior_params(ctx, rec)
        z = reparam_project(q, as_tensor(noise.eps_latent[..., t, :]), rec)
        kl = kl + kl_diag(q, p)
        xn = forward_sample(x_t, n, as_tensor(noise.eps[..., t, :]), sched)
        x0_hat = predict_x0(xn, n, model.condition(z, ctx.state.h), model.decoder)
        recon = recon + ((x_t - x0_hat) ** 2).sum(-1)
        ctx = recurrence_update(ctx, x_t, z, rec)
    return _finish(kl, recon, reduce)


def gaussian_decoder_loss(window, model: StochDiffModel, sched=None, rng=None, noise=None, reduce: bool = True):
    """KL to N(0, I) plus Gaussian negative log-likelihood of a one-shot decoder."""
    x, noise = _prepare(window, model, rng, noise)
    rec = model.recurrence
    batch_shape = tuple(x.shape[:-2])
    ctx = rec.initial_context(batch_shape)
    kl = torch.zeros(batch_shape, dtype=x.dtype)
    recon = torch.zeros(batch_shape, dtype=x.dtype)
    for t in range(x.shape[-2]):
        x_t = x[..., t, :]
        q = posterior_params(ctx, x_t, rec)
        z = reparam_project(q, as_tensor(noise.eps_latent[..., t, :]), rec)
        kl = kl + kl_diag(q, prior_params(ctx, rec))
        out = model.decoder(model.condition(z, ctx.state.h))
        recon = recon + 0.5 * (LOG_2PI + torch.log(out.var) + (x_t - out.mean) ** 2 / out.var).sum(-1)
        ctx = recurrence_update(ctx, x_t, z, rec)
    return _finish(kl, recon, reduce)


def regression_loss(window, model: StochDiffModel, sched=None, rng=None, noise=None, reduce: bool = True):
    """Squared error of the deterministic one-step-ahead prediction from h_{t-1}."""
    x = as_tensor(window)
    rec = model.recurrence
    batch_shape = tuple(x.shape[:-2])
    ctx = rec.initial_context(batch_shape)
    recon = torch.zeros(batch_shape, dtype=x.dtype)
    for t in range(x.shape[-2]):
        x_t = x[..., t, :]
        recon = recon + ((x_t - model.decoder(ctx.state.h)) ** 2).sum(-1)
        ctx = recurrence_update(ctx, x_t, None, rec)
    return _finish(torch.zeros_like(recon), recon, reduce)


LossFn = Callable[..., tuple[torch.Tensor, torch.Tensor, torch.Tensor]]


@dataclass
class Variant:
    name: str
    model: StochDiffModel
    loss: LossFn
    sampler: Callable
    has_kl: bool
    probabilistic: bool


def variant_loss(model: StochDiffModel) -> LossFn:
    v = model.variant
    if v == "lstm":
        return regression_loss
    if v == "vlstm_standard_prior":
        return gaussian_decoder_loss
    if v in ("vlstm_diffusion", "stochdiff"):
        return dual_loss
    raise UnknownVariantError(f"unknown variant {v!r}")


def build_variant(model_cfg: ModelConfig, seed: int = 0) -> Variant:
    from .forecasting import generate_step

    if model_cfg.variant not in VARIANTS:
        raise UnknownVariantError(f"unknown variant {model_cfg.variant!r}")
    model = build_model(model_cfg, seed)
    return Variant(
        name=model_cfg.variant,
        model=model,
        loss=variant_loss(model),
        sampler=generate_step,
        has_kl=model_cfg.variant != "lstm",
        probabilistic=model_cfg.variant != "lstm",
    )


class PlateauScheduler:
    """Multiply the learning rate by ``factor`` once the best loss has not
    improved (by ``rel_tol`` relative) for ``patience`` consecutive epochs."""

    def __init__(self, lr: float, patience: int = 10, factor: float = 0.5, rel_tol: float = 1e-6):
        if patience < 1:
            raise ValueError("patience must be >= 1")
        if not 0 < factor < 1:
            raise ValueError("lr decay factor must lie in (0, 1)")
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        self.lr = lr
        self.patience = patience
        self.factor = factor
        self.rel_tol = rel_tol
        self.best = math.inf
        self.stale = 0

    def step(self, loss: float) -> float:
        improved = not math.isfinite(self.best) or loss < self.best - self.rel_tol * abs(self.best)
        if improved:
            self.best = loss
            self.stale = 0
        else:
            self.stale += 1
            if self.stale >= self.patience:
                self.lr *= self.factor
                self.stale = 0
        return self.lr


@dataclass
class TrainConfig:
    model: ModelConfig
    lr: float = 1e-3
    epochs: int = 100
    batch_size: int = 32
    patience: int = 10
    lr_decay: float = 0.5
    clip_norm: float = 5.0
    seed: int = 0
    # epochs over which the KL weight ramps linearly from 0 to 1; 0 disables
    kl_warmup: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if not 0 < self.lr_decay < 1:
            raise ValueError("lr_decay must lie in (0, 1)")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if self.kl_warmup < 0:
            raise ValueError("kl_warmup must be >= 0")

    def kl_weight(self, epoch: int) -> float:
        if self.kl_warmup == 0:
            return 1.0
        return min(1.0, (epoch - 1) / self.kl_warmup)


@dataclass
class EpochRecord:
    epoch: int
    total: float
    kl: float
    recon: float
    lr: float
    seconds: float = 0.0

    def as_record(self, timing: bool = False) -> dict:
        rec = asdict(self)
        if not timing:
            rec.pop("seconds")
        return rec


@dataclass
class TrainReport:
    epochs: list[EpochRecord] = field(default_factory=list)
    wall_time: float = 0.0

    @property
    def totals(self) -> list[float]:
        return [e.total for e in self.epochs]

    @property
    def recons(self) -> list[float]:
        return [e.recon for e in self.epochs]

    @property
    def lrs(self) -> list[float]:
        return [e.lr for e in self.epochs]


def train(
    windows,
    cfg: TrainConfig,
    model: StochDiffModel | None = None,
    on_epoch: Callable[[EpochRecord], None] | None = None,
) -> tuple[StochDiffModel, TrainReport]:
    """Optimise the variant's objective over ``windows`` of shape (M, T, d).

    Windows are shuffled every epoch; each batch contributes the sum of its
    window losses to one Adam update. Everything random flows from
    ``cfg.seed``. With ``cfg.kl_warmup`` set, early epochs step on a
    down-weighted KL term; the recorded losses are always unweighted.
    """
    data = as_tensor(np.asarray(windows, dtype=np.float64))
    if data.ndim != 3 or data.shape[0] < 1:
        raise ValueError(f"need at least one window of shape (T, d); got {tuple(data.shape)}")
    if model is None:
        model = build_model(cfg.model, cfg.seed)
    loss_fn = variant_loss(model)
    rng = np.random.default_rng(cfg.seed)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    plateau = PlateauScheduler(cfg.lr, cfg.patience, cfg.lr_decay)
    report = TrainReport()
    start = time.perf_counter()
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        lr = plateau.lr
        beta = cfg.kl_weight(epoch)
        for group in opt.param_groups:
            group["lr"] = lr
        sums = np.zeros(3)
        order = rng.permutation(data.shape[0])
        for lo in range(0, len(order), cfg.batch_size):
            idx = order[lo : lo + cfg.batch_size]
            total, kl, recon = loss_fn(data[idx], model, rng=rng, reduce=False)
            bad = ~torch.isfinite(total)
            if bool(bad.any()):
                window_id = int(idx[int(bad.nonzero()[0, 0])])
                raise TrainingError(f"non-finite loss at epoch {epoch}, window {window_id}")
            opt.zero_grad()
            objective = total.sum() if beta == 1.0 else (recon + beta * kl).sum()
            objective.backward()
            if cfg.clip_norm:
                torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.clip_norm)
            opt.step()
            sums += [total.sum().item(), kl.sum().item(), recon.sum().item()]
        record = EpochRecord(epoch, float(sums[0]), float(sums[1]), float(sums[2]), lr, time.perf_counter() - t0)
        report.epochs.append(record)
        log.debug("epoch %d total=%.4f kl=%.4f recon=%.4f lr=%.2e", epoch, *sums, lr)
        if on_epoch is not None:
            on_epoch(record)
        plateau.step(record.total)
    report.wall_time = time.perf_counter() - start
    return model, report

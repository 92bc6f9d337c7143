"""Per-step latent prior/posterior and the LSTM recurrence that carries them.

The prior over ``z_t`` depends on the previous hidden state only; the
posterior also sees the current observation. Sampled latents are passed
through a small projection network before they reach the LSTM and the
denoiser.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .nn import DTYPE, FCN, Linear, LSTMCell, LSTMState, ShapeError, softplus_var
from .schedule import GaussianDiag


@dataclass
class LatentSample:
    z: torch.Tensor
    source: str  # "prior" or "posterior"


@dataclass
class RecurrenceContext:
    state: LSTMState
    step_index: int = 0

    @classmethod
    def initial(cls, hidden: int, batch_shape: tuple[int, ...] = ()) -> RecurrenceContext:
        return cls(LSTMState.zeros(hidden, batch_shape), 0)

    def clone(self) -> RecurrenceContext:
        return RecurrenceContext(LSTMState(self.state.h.clone(), self.state.c.clone()), self.step_index)

    def repeat(self, k: int) -> RecurrenceContext:
        return RecurrenceContext(self.state.repeat(k), self.step_index)


class GaussianHead(nn.Module):
    """Two-layer tanh encoder followed by linear mean and softplus variance heads."""

    def __init__(self, in_dim: int, hidden: int, out_dim: int):
        super().__init__()
        self.encoder = FCN([in_dim, hidden, hidden], activation="tanh", out_activation="tanh")
        self.mean = Linear(hidden, out_dim)
        self.var = Linear(hidden, out_dim)

    def forward(self, x: torch.Tensor) -> GaussianDiag:
        feats = self.encoder(x)
        return GaussianDiag(self.mean(feats), softplus_var(self.var(feats)))


class LatentRecurrence(nn.Module):
    """LSTM backbone plus prior encoder, posterior encoder and latent projection.

    With ``learned_prior=False`` the prior is the fixed standard normal and no
    prior encoder is built. With ``latent_dim=0`` the module degenerates to
    a plain LSTM over the observations.
    """

    def __init__(self, data_dim: int, hidden: int, latent_dim: int, enc_hidden: int, learned_prior: bool = True):
        super().__init__()
        self.data_dim = data_dim
        self.hidden = hidden
        self.latent_dim = latent_dim
        self.learned_prior = learned_prior and latent_dim > 0
        self.rnn = LSTMCell(data_dim + latent_dim, hidden)
        if latent_dim > 0:
            if self.learned_prior:
                self.prior_net = GaussianHead(hidden, enc_hidden, latent_dim)
            self.posterior_net = GaussianHead(hidden + data_dim, enc_hidden, latent_dim)
            self.projection = FCN([latent_dim, latent_dim, latent_dim], activation="tanh")

    def initial_context(self, batch_shape: tuple[int, ...] = ()) -> RecurrenceContext:
        return RecurrenceContext.initial(self.hidden, batch_shape)


def prior_params(ctx: RecurrenceContext, model: LatentRecurrence) -> GaussianDiag:
    h = ctx.state.h
    if not model.learned_prior:
        shape = (*h.shape[:-1], model.latent_dim)
        return GaussianDiag(torch.zeros(shape, dtype=DTYPE), torch.ones(shape, dtype=DTYPE))
    return model.prior_net(h)


def posterior_params(ctx: RecurrenceContext, x_t: torch.Tensor, model: LatentRecurrence) -> GaussianDiag:
    if x_t.shape[-1] != model.data_dim:
        raise ShapeError(f"observation width {x_t.shape[-1]} != data_dim {model.data_dim}")
    return model.posterior_net(torch.cat([ctx.state.h, x_t], dim=-1))


def reparam_project(g: GaussianDiag, eps: torch.Tensor, model: LatentRecurrence, source: str = "posterior") -> LatentSample:
    if eps.shape[-1] != g.mean.shape[-1]:
        raise ShapeError(f"eps width {eps.shape[-1]} != latent width {g.mean.shape[-1]}")
    raw = g.mean + torch.sqrt(g.var) * eps
    return LatentSample(model.projection(raw), source)


def kl_diag(q: GaussianDiag, p: GaussianDiag):
    """KL(q || p) for diagonal Gaussians, summed over the last axis."""
    if q.mean.shape[-1] != p.mean.shape[-1]:
        raise ShapeError(f"KL widths differ: {q.mean.shape[-1]} vs {p.mean.shape[-1]}")
    if bool((q.var <= 0).any()) or bool((p.var <= 0).any()):
        raise ValueError("KL requires strictly positive variances")
    log = torch.log if isinstance(q.var, torch.Tensor) else np.log
    terms = 0.5 * (log(p.var / q.var) + (q.var + (q.mean - p.mean) ** 2) / p.var - 1.0)
    return terms.sum(-1)


def recurrence_update(ctx: RecurrenceContext, x_t: torch.Tensor, z_t: LatentSample | None, model: LatentRecurrence) -> RecurrenceContext:
    if x_t.shape[-1] != model.data_dim:
        raise ShapeError(f"observation width {x_t.shape[-1]} != data_dim {model.data_dim}")
    inp = x_t if z_t is None else torch.cat([x_t, z_t.z], dim=-1)
    return RecurrenceContext(model.rnn(inp, ctx.state), ctx.step_index + 1)

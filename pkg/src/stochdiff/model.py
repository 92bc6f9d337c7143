"""Model assembly for the four ablation variants."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import torch
from torch import nn

from .denoiser import AttentionNet, DenoiserConfig
from .latent import GaussianHead, LatentRecurrence, LatentSample
from .nn import FCN, init_uniform
from .schedule import DiffusionSchedule, build_schedule

VARIANTS = ("lstm", "vlstm_standard_prior", "vlstm_diffusion", "stochdiff")
DIFFUSION_VARIANTS = ("vlstm_diffusion", "stochdiff")


class UnknownVariantError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    data_dim: int
    variant: str = "stochdiff"
    hidden: int = 128
    latent: int = 128
    enc_hidden: int = 128
    embed: int = 32
    heads: int = 1
    denoiser_hidden: int = 32
    context_tokens: int = 4
    n_steps: int = 100
    beta_min: float = 1e-4
    beta_max: float = 0.1

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise UnknownVariantError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")

    @classmethod
    def from_dict(cls, d: dict) -> ModelConfig:
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})

    def to_dict(self) -> dict:
        return asdict(self)


class StochDiffModel(nn.Module):
    """Recurrence plus the variant's decoder.

    ``lstm``: deterministic next-step regressor on the hidden state.
    ``vlstm_standard_prior``: N(0, I) prior, Gaussian decoder on [z, h].
    ``vlstm_diffusion``: N(0, I) prior, diffusion decoder on [z, h].
    ``stochdiff``: learned prior, diffusion decoder conditioned on z alone.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        v = cfg.variant
        latent = 0 if v == "lstm" else cfg.latent
        self.recurrence = LatentRecurrence(cfg.data_dim, cfg.hidden, latent, cfg.enc_hidden, learned_prior=(v == "stochdiff"))
        if v == "lstm":
            self.decoder = FCN([cfg.hidden, cfg.enc_hidden, cfg.data_dim], activation="tanh")
        elif v == "vlstm_standard_prior":
            self.decoder = GaussianHead(cfg.latent + cfg.hidden, cfg.enc_hidden, cfg.data_dim)
        else:
            self.decoder = AttentionNet(
                DenoiserConfig(
                    data_dim=cfg.data_dim,
                    cond_dim=self.cond_dim,
                    embed_dim=cfg.embed,
                    heads=cfg.heads,
                    hidden=cfg.denoiser_hidden,
                    context_tokens=cfg.context_tokens,
                )
            )
        self._schedule = build_schedule(cfg.n_steps, cfg.beta_min, cfg.beta_max)

    @property
    def variant(self) -> str:
        return self.cfg.variant

    @property
    def schedule(self) -> DiffusionSchedule:
        return self._schedule

    @property
    def is_diffusion(self) -> bool:
        return self.cfg.variant in DIFFUSION_VARIANTS

    @property
    def is_deterministic(self) -> bool:
        return self.cfg.variant == "lstm"

    @property
    def cond_dim(self) -> int:
        if self.cfg.variant == "stochdiff":
            return self.cfg.latent
        return self.cfg.latent + self.cfg.hidden

    def condition(self, z: LatentSample, h_prev: torch.Tensor) -> torch.Tensor:
        if self.cfg.variant == "stochdiff":
            return z.z
        return torch.cat([z.z, h_prev], dim=-1)

    def generation_noise_width(self) -> int:
        """Standard-normal draws consumed per sample per forecast step."""
        cfg = self.cfg
        if cfg.variant == "lstm":
            return 0
        if cfg.variant == "vlstm_standard_prior":
            return cfg.latent + cfg.data_dim
        return cfg.latent + cfg.n_steps * cfg.data_dim


def build_model(cfg: ModelConfig, seed: int = 0) -> StochDiffModel:
    return init_uniform(StochDiffModel(cfg), seed)

"""Clean-data prediction network conditioned on a latent vector.

Each of the ``d`` coordinates of the noisy point becomes one token. Tokens
go through self-attention (correlations between dimensions), receive the
diffusion-step embedding, then cross-attend to a small set of context
tokens lifted from the conditioning vector. A shared per-token head maps
every token back to one scalar.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .nn import DTYPE, FCN, Attention, Linear, ShapeError


@dataclass(frozen=True)
class DenoiserConfig:
    data_dim: int
    cond_dim: int
    embed_dim: int = 16
    heads: int = 1
    hidden: int = 16
    context_tokens: int = 4

    def __post_init__(self):
        for name in ("data_dim", "cond_dim", "embed_dim", "heads", "hidden", "context_tokens"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ValueError(f"DenoiserConfig.{name} must be a positive integer, got {value}")


def step_embedding(n, width: int) -> torch.Tensor:
    """Sinusoidal encoding: sines of ``n * freq_k`` followed by cosines.

    The first frequency is 1 and the rest decay geometrically to 1/10000;
    odd widths get a trailing zero.
    """
    n_arr = torch.as_tensor(np.asarray(n, dtype=np.float64), dtype=DTYPE)
    half = width // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=DTYPE) / max(half, 1))
    angles = n_arr[..., None] * freqs
    emb = torch.cat([torch.sin(angles), torch.cos(angles)], dim=-1)
    if width % 2:
        emb = torch.cat([emb, torch.zeros(*emb.shape[:-1], 1, dtype=DTYPE)], dim=-1)
    return emb


class AttentionNet(nn.Module):
    def __init__(self, cfg: DenoiserConfig):
        super().__init__()
        self.cfg = cfg
        d, e = cfg.data_dim, cfg.embed_dim
        # scalar -> token lift, one affine map per data dimension
        self.token_weight = nn.Parameter(torch.empty(d, e, dtype=DTYPE))
        self.token_bias = nn.Parameter(torch.empty(d, e, dtype=DTYPE))
        self.fan_in = {"token_weight": 1, "token_bias": 1}
        self.self_attn = Attention(e, e, e, cfg.heads)
        self.step_proj = Linear(e, e)
        self.context = Linear(cfg.cond_dim, cfg.context_tokens * e)
        self.cross_attn = Attention(e, e, e, cfg.heads)
        self.head = FCN([e, cfg.hidden, 1], activation="tanh")

    def forward(self, xn: torch.Tensor, n, cond: torch.Tensor) -> torch.Tensor:
        cfg = self.cfg
        if xn.shape[-1] != cfg.data_dim:
            raise ShapeError(f"noisy input width {xn.shape[-1]} != data_dim {cfg.data_dim}")
        if cond.shape[-1] != cfg.cond_dim:
            raise ShapeError(f"condition width {cond.shape[-1]} != cond_dim {cfg.cond_dim}")
        tokens = xn[..., None] * self.token_weight + self.token_bias
        tokens = tokens + self.self_attn(tokens, tokens, tokens)
        emb = self.step_proj(step_embedding(n, cfg.embed_dim))
        if emb.ndim > 1:
            emb = emb.unsqueeze(-2)  # per-row step index: broadcast over tokens
        tokens = tokens + emb
        ctx = torch.tanh(self.context(cond)).unflatten(-1, (cfg.context_tokens, cfg.embed_dim))
        tokens = tokens + self.cross_attn(tokens, ctx, ctx)
        return self.head(tokens).squeeze(-1)


def predict_x0(xn: torch.Tensor, n, cond: torch.Tensor, net: AttentionNet) -> torch.Tensor:
    return net(xn, n, cond)

"""Closed-form diffusion mathematics.

Every function here works on numpy arrays and on torch tensors alike; the
step index ``n`` is 1-based and may be a scalar or an integer array with one
entry per leading batch row.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch


class ScheduleError(ValueError):
    pass


@dataclass(frozen=True)
class GaussianDiag:
    """Diagonal Gaussian given by a mean vector and a per-dimension variance."""

    mean: np.ndarray | torch.Tensor
    var: np.ndarray | torch.Tensor

    def __post_init__(self):
        if tuple(self.mean.shape) != tuple(self.var.shape):
            raise ValueError(f"mean shape {tuple(self.mean.shape)} != var shape {tuple(self.var.shape)}")
        if bool((self.var <= 0).any()):
            raise ValueError("GaussianDiag variance must be strictly positive")


@dataclass(frozen=True)
class DiffusionSchedule:
    """Per-step noise constants, index 0 holding step n=1.

    ``x0_coefs`` and ``xn_coefs`` weight the clean-data estimate and the
    noisy sample in the forward-posterior mean.
    """

    betas: np.ndarray
    alphas: np.ndarray = field(init=False)
    alpha_bars: np.ndarray = field(init=False)
    alpha_bars_prev: np.ndarray = field(init=False)
    one_minus_alpha_bars: np.ndarray = field(init=False)
    posterior_vars: np.ndarray = field(init=False)
    x0_coefs: np.ndarray = field(init=False)
    xn_coefs: np.ndarray = field(init=False)

    def __post_init__(self):
        betas = np.asarray(self.betas, dtype=np.float64)
        if betas.ndim != 1 or betas.size < 1:
            raise ScheduleError("betas must be a non-empty vector")
        if not np.all((betas > 0) & (betas < 1)):
            raise ScheduleError("every beta must lie in (0, 1)")
        alphas = 1.0 - betas
        alpha_bars = np.cumprod(alphas)
        alpha_bars_prev = np.concatenate([[1.0], alpha_bars[:-1]])
        # 1 - abar without cancellation, so tiny betas stay accurate
        one_minus = -np.expm1(np.cumsum(np.log1p(-betas)))
        one_minus_prev = np.concatenate([[0.0], one_minus[:-1]])
        posterior_vars = one_minus_prev / one_minus * betas
        posterior_vars[0] = betas[0]
        x0_coefs = np.sqrt(alpha_bars_prev) * betas / one_minus
        xn_coefs = np.sqrt(alphas) * one_minus_prev / one_minus
        x0_coefs[0], xn_coefs[0] = 1.0, 0.0  # abar_0 = 1
        for name, value in [
            ("betas", betas),
            ("alphas", alphas),
            ("alpha_bars", alpha_bars),
            ("alpha_bars_prev", alpha_bars_prev),
            ("one_minus_alpha_bars", one_minus),
            ("posterior_vars", posterior_vars),
            ("x0_coefs", x0_coefs),
            ("xn_coefs", xn_coefs),
        ]:
            value.setflags(write=False)
            object.__setattr__(self, name, value)

    @property
    def n_steps(self) -> int:
        return int(self.betas.size)


def build_schedule(n_steps: int = 100, beta_min: float = 1e-4, beta_max: float = 0.1, kind: str = "linear") -> DiffusionSchedule:
    if kind != "linear":
        raise ScheduleError(f"unsupported schedule kind {kind!r}")
    if int(n_steps) != n_steps or n_steps < 1:
        raise ScheduleError(f"n_steps must be a positive integer, got {n_steps}")
    if not (0.0 < beta_min <= beta_max < 1.0):
        raise ScheduleError(f"need 0 < beta_min <= beta_max < 1, got beta_min={beta_min}, beta_max={beta_max}")
    if n_steps == 1:
        betas = np.array([beta_min], dtype=np.float64)
    else:
        betas = np.linspace(beta_min, beta_max, int(n_steps), dtype=np.float64)
    return DiffusionSchedule(betas)


def _coef(vec: np.ndarray, n, like):
    """Gather ``vec[n-1]`` shaped to broadcast against ``like``."""
    if isinstance(n, torch.Tensor):
        n = n.detach().cpu().numpy()
    idx = np.asarray(n)
    if idx.dtype.kind not in "iu":
        if not np.all(idx == np.round(idx)):
            raise ScheduleError(f"step index must be integral, got {n}")
        idx = idx.astype(np.int64)
    if np.any(idx < 1) or np.any(idx > vec.size):
        raise ScheduleError(f"step index out of range 1..{vec.size}: {n}")
    c = vec[idx - 1]
    if c.ndim == 0:
        return float(c)
    c = c.reshape(c.shape + (1,) * (like.ndim - c.ndim))
    if isinstance(like, torch.Tensor):
        return torch.as_tensor(c, dtype=like.dtype, device=like.device)
    return c


def forward_sample(x0, n, eps, sched: DiffusionSchedule):
    """Noise ``x0`` straight to step ``n``: sqrt(abar_n) x0 + sqrt(1 - abar_n) eps."""
    a = _coef(np.sqrt(sched.alpha_bars), n, x0)
    b = _coef(np.sqrt(sched.one_minus_alpha_bars), n, x0)
    return a * x0 + b * eps


def forward_step(x_prev, n, eps, sched: DiffusionSchedule):
    """One Markov noising transition from step n-1 to step n."""
    a = _coef(np.sqrt(sched.alphas), n, x_prev)
    b = _coef(np.sqrt(sched.betas), n, x_prev)
    return a * x_prev + b * eps


def posterior_mean(xn, x0, n, sched: DiffusionSchedule):
    return _coef(sched.x0_coefs, n, x0) * x0 + _coef(sched.xn_coefs, n, xn) * xn


def forward_posterior(xn, x0, n, sched: DiffusionSchedule) -> GaussianDiag:
    mean = posterior_mean(xn, x0, n, sched)
    var = _coef(sched.posterior_vars, n, mean)
    if isinstance(mean, torch.Tensor):
        var = torch.ones_like(mean) * var
    else:
        var = np.ones_like(mean, dtype=np.float64) * var
    return GaussianDiag(mean, var)


def reverse_step(xn, x0_pred, n, sched: DiffusionSchedule, noise=None, add_noise: bool = False):
    """Ancestral reverse step using a clean-data prediction.

    Returns the posterior mean evaluated at ``x0_pred``, plus
    ``sqrt(posterior_var_n) * noise`` when ``add_noise`` is set. The final
    step (n = 1) must be taken without noise.
    """
    mean = posterior_mean(xn, x0_pred, n, sched)
    if not add_noise:
        return mean
    if np.any(np.asarray(n.detach().cpu() if isinstance(n, torch.Tensor) else n) == 1):
        raise ScheduleError("noise must not be injected at the final step n=1")
    if noise is None:
        raise ScheduleError("add_noise=True requires a noise vector")
    return mean + _coef(np.sqrt(sched.posterior_vars), n, mean) * noise

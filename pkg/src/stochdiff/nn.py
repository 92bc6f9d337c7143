"""Differentiable building blocks: LSTM cell, fully connected nets, attention.

Everything runs in float64 on the CPU. Parameters are plain ``torch.nn``
parameters, so a model's ``named_parameters()`` is the parameter set and its
order is the registration order.
"""

from __future__ import annotations

import math
from collections.abc import Callable, Mapping
from dataclasses import dataclass, field

import torch
from torch import nn

DTYPE = torch.float64
VAR_FLOOR = 1e-6
GRAD_FLOOR = 1e-6

_ACTIVATIONS: dict[str, Callable[[torch.Tensor], torch.Tensor]] = {
    "relu": torch.relu,
    "tanh": torch.tanh,
    "identity": lambda x: x,
    "softplus": torch.nn.functional.softplus,
}


class ShapeError(ValueError):
    pass


def as_tensor(x) -> torch.Tensor:
    return torch.as_tensor(x, dtype=DTYPE)


def _check_width(x: torch.Tensor, width: int, what: str):
    if x.shape[-1] != width:
        raise ShapeError(f"{what}: expected trailing width {width}, got shape {tuple(x.shape)}")


def softplus_var(logits: torch.Tensor, floor: float = VAR_FLOOR) -> torch.Tensor:
    return torch.nn.functional.softplus(logits) + floor


class Linear(nn.Module):
    def __init__(self, in_features: int, out_features: int):
        super().__init__()
        self.in_features = in_features
        self.out_features = out_features
        self.weight = nn.Parameter(torch.empty(out_features, in_features, dtype=DTYPE))
        self.bias = nn.Parameter(torch.empty(out_features, dtype=DTYPE))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        _check_width(x, self.in_features, "Linear")
        return x @ self.weight.T + self.bias


class FCN(nn.Module):
    """Affine chain ``sizes[0] -> ... -> sizes[-1]``.

    ``activation`` is applied between layers and ``out_activation`` after
    the last one.
    """

    def __init__(self, sizes: list[int], activation: str = "tanh", out_activation: str = "identity"):
        super().__init__()
        if len(sizes) < 2:
            raise ValueError("FCN needs at least an input and an output size")
        for act in (activation, out_activation):
            if act not in _ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r}")
        self.sizes = list(sizes)
        self.activation = activation
        self.out_activation = out_activation
        self.layers = nn.ModuleList(Linear(a, b) for a, b in zip(sizes[:-1], sizes[1:]))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        act = _ACTIVATIONS[self.activation]
        for i, layer in enumerate(self.layers):
            x = layer(x)
            x = act(x) if i < len(self.layers) - 1 else _ACTIVATIONS[self.out_activation](x)
        return x


def fcn_apply(x: torch.Tensor, net: FCN) -> torch.Tensor:
    return net(x)


@dataclass
class LSTMState:
    h: torch.Tensor
    c: torch.Tensor

    def __post_init__(self):
        if self.h.shape != self.c.shape:
            raise ShapeError(f"h shape {tuple(self.h.shape)} != c shape {tuple(self.c.shape)}")

    @classmethod
    def zeros(cls, hidden: int, batch_shape: tuple[int, ...] = ()) -> LSTMState:
        return cls(torch.zeros(*batch_shape, hidden, dtype=DTYPE), torch.zeros(*batch_shape, hidden, dtype=DTYPE))

    def repeat(self, k: int) -> LSTMState:
        """Repeat each leading batch row ``k`` times (row-major)."""
        return LSTMState(self.h.repeat_interleave(k, dim=0), self.c.repeat_interleave(k, dim=0))


class LSTMCell(nn.Module):
    """Standard LSTM cell; gate rows are ordered input, forget, candidate, output."""

    def __init__(self, input_size: int, hidden_size: int):
        super().__init__()
        self.input_size = input_size
        self.hidden_size = hidden_size
        self.weight = nn.Parameter(torch.empty(4 * hidden_size, input_size + hidden_size, dtype=DTYPE))
        self.bias = nn.Parameter(torch.empty(4 * hidden_size, dtype=DTYPE))

    def forward(self, x: torch.Tensor, state: LSTMState) -> LSTMState:
        _check_width(x, self.input_size, "LSTMCell input")
        _check_width(state.h, self.hidden_size, "LSTMCell state")
        gates = torch.cat([x, state.h], dim=-1) @ self.weight.T + self.bias
        i, f, g, o = gates.chunk(4, dim=-1)
        c = torch.sigmoid(f) * state.c + torch.sigmoid(i) * torch.tanh(g)
        h = torch.sigmoid(o) * torch.tanh(c)
        return LSTMState(h, c)


def lstm_step(x: torch.Tensor, state: LSTMState, cell: LSTMCell) -> LSTMState:
    return cell(x, state)


class Attention(nn.Module):
    """Multi-head scaled dot-product attention with learned projections.

    Self-attention is the special case where queries, keys and values come
    from the same token set.
    """

    def __init__(self, query_dim: int, kv_dim: int, width: int, heads: int = 1):
        super().__init__()
        if width % heads:
            raise ValueError(f"width {width} is not divisible by heads {heads}")
        self.heads = heads
        self.width = width
        self.q_proj = Linear(query_dim, width)
        self.k_proj = Linear(kv_dim, width)
        self.v_proj = Linear(kv_dim, width)
        self.out_proj = Linear(width, query_dim)

    def _split(self, x: torch.Tensor) -> torch.Tensor:
        # (..., m, width) -> (..., heads, m, width // heads)
        return x.unflatten(-1, (self.heads, self.width // self.heads)).transpose(-3, -2)

    def forward(self, queries, keys, values, return_weights: bool = False):
        if keys.shape[-2] != values.shape[-2]:
            raise ShapeError(f"{keys.shape[-2]} key rows but {values.shape[-2]} value rows")
        q = self._split(self.q_proj(queries))
        k = self._split(self.k_proj(keys))
        v = self._split(self.v_proj(values))
        scores = q @ k.transpose(-1, -2) / math.sqrt(q.shape[-1])
        weights = torch.softmax(scores, dim=-1)
        out = (weights @ v).transpose(-3, -2).flatten(-2)
        out = self.out_proj(out)
        return (out, weights) if return_weights else out


def attention(queries, keys, values, module: Attention, return_weights: bool = False):
    return module(queries, keys, values, return_weights=return_weights)


def init_uniform(module: nn.Module, seed: int):
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every weight and its bias."""
    gen = torch.Generator().manual_seed(int(seed))

    def fill(p: torch.Tensor, fan_in: int):
        bound = 1.0 / math.sqrt(fan_in)
        p.copy_(torch.rand(p.shape, generator=gen, dtype=DTYPE) * 2 * bound - bound)

    with torch.no_grad():
        for sub in module.modules():
            if isinstance(sub, (Linear, LSTMCell)):
                fill(sub.weight, sub.weight.shape[1])
                fill(sub.bias, sub.weight.shape[1])
            else:
                # modules owning raw parameters declare their fan-in per name
                fan_ins = getattr(sub, "fan_in", {})
                for name, p in sub.named_parameters(recurse=False):
                    fill(p, fan_ins.get(name, p.shape[-1]))
    return module


def parameter_dict(module: nn.Module) -> dict[str, nn.Parameter]:
    return dict(module.named_parameters())


@dataclass
class GradCheckReport:
    max_rel_error: float
    per_parameter: dict[str, float] = field(default_factory=dict)
    tolerance: float = 1e-4
    passed: bool = False


def gradient_check(
    fn: Callable[[], torch.Tensor],
    params: Mapping[str, torch.Tensor] | nn.Module,
    step: float = 1e-5,
    tolerance: float = 1e-4,
) -> GradCheckReport:
    """Compare autograd gradients against central finite differences.

    ``fn`` must be deterministic (reseed any randomness inside it). The error
    for a parameter tensor is ``|g_auto - g_fd| / max(|g_auto| + |g_fd|, GRAD_FLOOR)``
    in the Euclidean norm. The floor keeps parameters whose true gradient is
    zero (e.g. attention key biases) from scoring finite-difference round-off
    as a 100% error.
    """
    if isinstance(params, nn.Module):
        params = parameter_dict(params)
    tensors = list(params.values())
    for p in tensors:
        p.grad = None
    value = fn()
    if not torch.isfinite(value):
        raise FloatingPointError(f"function value is not finite: {value.item()}")
    grads = torch.autograd.grad(value, tensors, allow_unused=True)
    report = GradCheckReport(max_rel_error=0.0, tolerance=tolerance)
    with torch.no_grad():
        for (name, p), g in zip(params.items(), grads):
            g = torch.zeros_like(p) if g is None else g
            fd = torch.zeros_like(p)
            flat, fd_flat = p.view(-1), fd.view(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + step
                up = fn().item()
                flat[i] = orig - step
                down = fn().item()
                flat[i] = orig
                if not (math.isfinite(up) and math.isfinite(down)):
                    raise FloatingPointError(f"non-finite evaluation perturbing {name}[{i}]")
                fd_flat[i] = (up - down) / (2 * step)
            denom = max((g.norm() + fd.norm()).item(), GRAD_FLOOR)
            err = (g - fd).norm().item() / denom
            report.per_parameter[name] = err
            report.max_rel_error = max(report.max_rel_error, err)
    report.passed = report.max_rel_error <= tolerance
    return report

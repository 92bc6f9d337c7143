"""Declarative run configuration with a strict schema."""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Any, Literal

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .data import SYNTH_DEFAULTS, WindowSpec
from .model import VARIANTS, ModelConfig
from .training import TrainConfig

DATA_DIR_ENV = "STOCHDIFF_DATA_DIR"


class ConfigError(ValueError):
    pass


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SynthSection(_Strict):
    kind: Literal["sine_noise", "regime_ar", "drop_signal"] = "regime_ar"
    params: dict[str, Any] = Field(default_factory=dict)
    seed: int | None = None

    @field_validator("params")
    @classmethod
    def _known_params(cls, v, info):
        kind = info.data.get("kind", "regime_ar")
        unknown = set(v) - set(SYNTH_DEFAULTS[kind])
        if unknown:
            raise ValueError(f"unknown {kind} parameters: {sorted(unknown)}")
        return v


class DataSection(_Strict):
    path: str | None = None
    synth: SynthSection | None = None
    impute: Literal["reject", "ffill"] = "reject"
    time_column: str | None = None
    columns: list[str] | None = None
    split_fraction: float = Field(0.7, gt=0, lt=1)
    normalize: bool = True
    window: int = Field(50, ge=1)
    horizon: int = Field(10, ge=1)
    stride: int = Field(1, ge=1)
    eval_stride: int | None = Field(None, ge=1)

    def window_spec(self) -> WindowSpec:
        return WindowSpec(self.window, self.horizon, self.stride)


class ModelSection(_Strict):
    variant: Literal["lstm", "vlstm_standard_prior", "vlstm_diffusion", "stochdiff"] = "stochdiff"
    hidden: int = Field(128, ge=1)
    latent: int = Field(128, ge=1)
    enc_hidden: int = Field(128, ge=1)
    embed: int = Field(32, ge=1)
    heads: int = Field(1, ge=1)
    denoiser_hidden: int = Field(32, ge=1)
    context_tokens: int = Field(4, ge=1)
    n_steps: int = Field(100, ge=1)
    beta_min: float = Field(1e-4, gt=0, lt=1)
    beta_max: float = Field(0.1, gt=0, lt=1)


class TrainingSection(_Strict):
    lr: float = Field(1e-3, gt=0)
    epochs: int = Field(100, ge=0)
    batch_size: int = Field(32, ge=1)
    patience: int = Field(10, ge=1)
    lr_decay: float = Field(0.5, gt=0, lt=1)
    clip_norm: float = Field(5.0, ge=0)
    max_windows: int | None = Field(None, ge=1)
    kl_warmup: int = Field(0, ge=0)


class ForecastSection(_Strict):
    n_samples: int = Field(100, ge=1)
    levels: list[float] = Field(default_factory=lambda: [0.05, 0.5, 0.95])
    plot: bool = False

    @field_validator("levels")
    @classmethod
    def _levels(cls, v):
        if not v or any(not 0 <= x <= 1 for x in v):
            raise ValueError("levels must be a non-empty list of probabilities")
        return sorted(v)


class MonitorSection(_Strict):
    threshold: float = Field(0.30, gt=0, lt=1)
    point_mode: Literal["gmm", "median"] = "gmm"
    channel: int = Field(0, ge=0)
    stride: int = Field(1, ge=1)


class AblationSection(_Strict):
    variants: list[Literal["lstm", "vlstm_standard_prior", "vlstm_diffusion", "stochdiff"]] = Field(default_factory=lambda: list(VARIANTS))
    seeds: list[int] = Field(default_factory=lambda: [0, 1, 2])


class RunConfig(_Strict):
    seed: int = 0
    data: DataSection = Field(default_factory=DataSection)
    model: ModelSection = Field(default_factory=ModelSection)
    training: TrainingSection = Field(default_factory=TrainingSection)
    forecast: ForecastSection = Field(default_factory=ForecastSection)
    monitor: MonitorSection = Field(default_factory=MonitorSection)
    ablation: AblationSection = Field(default_factory=AblationSection)

    def model_config_for(self, data_dim: int, variant: str | None = None) -> ModelConfig:
        return ModelConfig(data_dim=data_dim, **{**self.model.model_dump(), **({"variant": variant} if variant else {})})

    def train_config_for(self, model_cfg: ModelConfig, seed: int | None = None) -> TrainConfig:
        t = self.training
        return TrainConfig(
            model=model_cfg,
            lr=t.lr,
            epochs=t.epochs,
            batch_size=t.batch_size,
            patience=t.patience,
            lr_decay=t.lr_decay,
            clip_norm=t.clip_norm,
            kl_warmup=t.kl_warmup,
            seed=self.seed if seed is None else seed,
        )


def _format_errors(exc: ValidationError) -> str:
    lines = []
    for err in exc.errors():
        path = ".".join(str(p) for p in err["loc"])
        if err["type"] == "extra_forbidden":
            lines.append(f"{path}: unknown key")
        else:
            lines.append(f"{path}: {err['msg']}")
    return "; ".join(lines)


def parse_config(raw: dict | None) -> RunConfig:
    try:
        return RunConfig.model_validate(raw or {})
    except ValidationError as exc:
        raise ConfigError(f"invalid config: {_format_errors(exc)}") from None


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Read a YAML/JSON document (or defaults when ``path`` is None) and apply
    dotted-key overrides such as ``{"training.epochs": 5}``."""
    raw: dict = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise FileNotFoundError(f"config file not found: {p}")
        raw = yaml.safe_load(p.read_text(encoding="utf-8")) or {}
        if not isinstance(raw, dict):
            raise ConfigError(f"{p}: top level must be a mapping")
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        node = raw
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = value
    return parse_config(raw)


def resolve_data_path(path: str) -> Path:
    p = Path(path)
    if p.is_absolute() or p.exists():
        return p
    base = os.environ.get(DATA_DIR_ENV)
    return Path(base) / p if base else p


def dump_config(cfg: RunConfig, path):
    Path(path).write_text(json.dumps(cfg.model_dump(mode="json"), indent=2, sort_keys=True) + "\n", encoding="utf-8")

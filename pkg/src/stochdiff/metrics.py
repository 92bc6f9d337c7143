"""Point and probabilistic forecast scores."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np


class ZeroNormalizerError(ValueError):
    pass


@dataclass
class MetricReport:
    nrmse: float
    crps_sum: float | None
    n_steps: int
    n_samples: int
    seed: int | None = None
    per_step_crps_sum: list[float] = field(default_factory=list)

    def as_record(self) -> dict:
        rec = asdict(self)
        rec.pop("per_step_crps_sum")
        return rec


def nrmse(pred, truth, normalizer: str = "abs") -> float:
    """Root mean squared error divided by the mean of |truth|.

    ``normalizer="mean"`` divides by the plain mean of ``truth`` instead.
    """
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs truth {truth.shape}")
    if normalizer == "abs":
        scale = np.mean(np.abs(truth))
    elif normalizer == "mean":
        scale = np.mean(truth)
    else:
        raise ValueError(f"unknown normalizer {normalizer!r}")
    if scale == 0:
        raise ZeroNormalizerError("mean of the truth is zero; NRMSE undefined")
    return float(np.sqrt(np.mean((pred - truth) ** 2)) / scale)


def crps_empirical(samples, x: float) -> float:
    """CRPS of the empirical CDF of ``samples`` at observation ``x``.

    Integrates (F(y) - 1{x <= y})^2 exactly over the pieces between the
    sorted samples and the observation, where both functions are constant.
    """
    s = np.sort(np.asarray(samples, dtype=np.float64).ravel())
    if s.size == 0:
        raise ValueError("CRPS needs at least one sample")
    knots = np.sort(np.append(s, x))
    left, right = knots[:-1], knots[1:]
    # F and the indicator are constant on [left, right)
    F = np.searchsorted(s, left, side="right") / s.size
    ind = (left >= x).astype(np.float64)
    return float(np.sum((F - ind) ** 2 * (right - left)))


def crps_energy(samples, x: float) -> float:
    """Same score from the identity E|X - x| - 0.5 E|X - X'|."""
    s = np.asarray(samples, dtype=np.float64).ravel()
    if s.size == 0:
        raise ValueError("CRPS needs at least one sample")
    return float(np.mean(np.abs(s - x)) - 0.5 * np.mean(np.abs(s[:, None] - s[None, :])))


def crps_sum(ens, truth) -> float:
    return float(np.mean(crps_sum_per_step(ens, truth)))


def crps_sum_per_step(ens, truth) -> np.ndarray:
    samples = np.asarray(getattr(ens, "samples", ens), dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if samples.ndim != 3 or samples.shape[1:] != truth.shape:
        raise ValueError(f"ensemble {samples.shape} does not match truth {truth.shape}")
    summed = samples.sum(-1)  # (S, H)
    target = truth.sum(-1)  # (H,)
    return np.array([crps_empirical(summed[:, h], target[h]) for h in range(truth.shape[0])])


def evaluate(ens, truth, point=None, seed: int | None = None) -> MetricReport:
    """Score one ensemble; ``point`` defaults to the per-step ensemble median."""
    samples = np.asarray(getattr(ens, "samples", ens), dtype=np.float64)
    if point is None:
        point = np.median(samples, axis=0)
    per_step = crps_sum_per_step(samples, truth)
    return MetricReport(
        nrmse=nrmse(point, truth),
        crps_sum=float(per_step.mean()),
        n_steps=int(samples.shape[1]),
        n_samples=int(samples.shape[0]),
        seed=seed,
        per_step_crps_sum=per_step.tolist(),
    )

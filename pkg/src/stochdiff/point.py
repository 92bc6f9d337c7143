"""Point forecasts from an ensemble: centre of the heaviest Gaussian mixture component."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

VAR_FLOOR = 1e-9
LOG_2PI = np.log(2 * np.pi)


class DegenerateInputError(ValueError):
    pass


class UnfittedModelError(ValueError):
    pass


@dataclass
class GMMModel:
    weights: np.ndarray  # (K,)
    means: np.ndarray  # (K, d)
    variances: np.ndarray  # (K, d)
    log_likelihood: list[float] = field(default_factory=list)
    bic: float = np.nan
    n_iter: int = 0

    @property
    def n_components(self) -> int:
        return int(self.weights.size)


def _log_resp(x, weights, means, variances):
    # (M, K) joint log densities
    diff = x[:, None, :] - means[None, :, :]
    logp = -0.5 * (LOG_2PI + np.log(variances)[None] + diff**2 / variances[None]).sum(-1)
    return logp + np.log(weights)[None]


def _kmeanspp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    centres = [x[rng.integers(len(x))]]
    for _ in range(1, k):
        d2 = np.min(((x[:, None, :] - np.array(centres)[None]) ** 2).sum(-1), axis=1)
        total = d2.sum()
        probs = d2 / total if total > 0 else np.full(len(x), 1.0 / len(x))
        centres.append(x[rng.choice(len(x), p=probs)])
    return np.array(centres)


def _fit_one(x: np.ndarray, k: int, seed: int, max_iter: int, tol: float, floor: np.ndarray) -> GMMModel:
    M, d = x.shape
    rng = np.random.default_rng(seed)
    means = _kmeanspp(x, k, rng)
    labels = np.argmin(((x[:, None, :] - means[None]) ** 2).sum(-1), axis=1)
    weights = np.array([max(np.mean(labels == j), 1.0 / M) for j in range(k)])
    weights /= weights.sum()
    variances = np.maximum(np.tile(x.var(axis=0), (k, 1)), floor)
    trace: list[float] = []
    for _ in range(max_iter):
        joint = _log_resp(x, weights, means, variances)
        norm = logsumexp(joint, axis=1)
        ll = float(norm.sum())
        if trace and ll < trace[-1] - 1e-8 * max(1.0, abs(trace[-1])):
            raise AssertionError(f"EM log-likelihood decreased: {trace[-1]} -> {ll}")
        trace.append(ll)
        if len(trace) > 1 and abs(trace[-1] - trace[-2]) <= tol * max(1.0, abs(trace[-1])):
            break
        resp = np.exp(joint - norm[:, None])
        nk = resp.sum(0) + 1e-300
        weights = nk / M
        means = (resp.T @ x) / nk[:, None]
        diff2 = (x[:, None, :] - means[None]) ** 2
        variances = np.maximum(np.einsum("mk,mkd->kd", resp, diff2) / nk[:, None], floor)
    n_params = (k - 1) + 2 * k * d
    bic = -2.0 * trace[-1] + n_params * np.log(M)
    return GMMModel(weights, means, variances, trace, float(bic), len(trace))


def fit_gmm(points, k_candidates=(1, 2, 3), seed: int = 0, max_iter: int = 200, tol: float = 1e-7) -> GMMModel:
    """EM-fit diagonal mixtures for each candidate K and keep the lowest BIC.

    Points are sorted lexicographically before seeding, so the fit does not
    depend on the order of the input rows.
    """
    x = np.asarray(points, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2 or x.shape[1] < 1:
        raise DegenerateInputError(f"points must be (M, d) with d >= 1, got {x.shape}")
    ks = sorted({int(k) for k in k_candidates})
    if not ks or ks[0] < 1:
        raise ValueError("k_candidates must be positive integers")
    if x.shape[0] < ks[-1]:
        raise DegenerateInputError(f"{x.shape[0]} points cannot support K={ks[-1]} components")
    if not np.all(np.isfinite(x)):
        raise DegenerateInputError("points contain non-finite values")
    x = x[np.lexsort(x.T[::-1])]
    floor = np.maximum(VAR_FLOOR, 1e-6 * x.var(axis=0))
    best = None
    for k in ks:
        model = _fit_one(x, k, seed, max_iter, tol, floor)
        if best is None or model.bic < best.bic:
            best = model
    return best


def select_point(gmm: GMMModel | None) -> np.ndarray:
    """Mean of the heaviest component; ties go to the lowest index."""
    if gmm is None or gmm.weights is None or gmm.weights.size == 0:
        raise UnfittedModelError("GMM has not been fitted")
    return gmm.means[int(np.argmax(gmm.weights))].copy()


def pointwise_forecast(ens, k_candidates=(1, 2, 3), seed: int = 0) -> np.ndarray:
    """Per-step GMM point estimate over the sample axis; returns (H, d)."""
    samples = getattr(ens, "samples", ens)
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 3:
        raise ValueError(f"ensemble must be (S, H, d), got {samples.shape}")
    S, H, d = samples.shape
    out = np.empty((H, d))
    for h in range(H):
        ks = [k for k in k_candidates if k <= S] or [1]
        out[h] = select_point(fit_gmm(samples[:, h, :], ks, seed))
    return out


def median_forecast(ens) -> np.ndarray:
    samples = np.asarray(getattr(ens, "samples", ens), dtype=np.float64)
    return np.median(samples, axis=0)

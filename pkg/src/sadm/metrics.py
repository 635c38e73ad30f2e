"""Distribution distance, mode coverage and the label-affinity heatmap."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffusion import NoiseSchedule
from .models import Denoiser, denoise_array
from .rng import make_stream


def _quantiles(sorted_vals: np.ndarray, n_out: int) -> np.ndarray:
    n = len(sorted_vals)
    if n == n_out:
        return sorted_vals
    src = (np.arange(n) + 0.5) / n
    dst = (np.arange(n_out) + 0.5) / n_out
    return np.interp(dst, src, sorted_vals)


def wasserstein_1d(a: np.ndarray, b: np.ndarray) -> float:
    """2-Wasserstein distance between two 1D empirical distributions.

    The coarser quantile function is linearly interpolated onto the finer
    grid of mid-point probability levels.
    """
    a, b = np.sort(np.asarray(a, dtype=np.float64)), np.sort(np.asarray(b, dtype=np.float64))
    m = max(len(a), len(b))
    qa, qb = _quantiles(a, m), _quantiles(b, m)
    return float(np.sqrt(np.mean((qa - qb) ** 2)))


def random_directions(dim: int, n_proj: int, seed: int) -> np.ndarray:
    u = make_stream(seed, "eval").standard_normal((n_proj, dim))
    return u / np.linalg.norm(u, axis=1, keepdims=True)


def sliced_wasserstein(a, b, n_proj: int = 128, seed: int = 0) -> float:
    """Mean 1D 2-Wasserstein distance over random unit projections."""
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    if a.shape[1] == 0 or b.shape[1] == 0:
        raise ValueError("samples have zero dimensions")
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    if len(a) < 2 or len(b) < 2:
        raise ValueError("need at least 2 samples on each side")
    if n_proj < 16:
        raise ValueError(f"n_proj must be >= 16, got {n_proj}")
    dirs = random_directions(a.shape[1], n_proj, seed)
    pa, pb = a @ dirs.T, b @ dirs.T
    return float(np.mean([wasserstein_1d(pa[:, k], pb[:, k]) for k in range(n_proj)]))


def mode_coverage(samples, modes, radius: float) -> tuple[int, np.ndarray]:
    """Number of modes with a sample within ``radius``, and nearest-mode counts."""
    modes = np.atleast_2d(np.asarray(modes, dtype=np.float64))
    if modes.size == 0:
        raise ValueError("mode list is empty")
    if radius <= 0:
        raise ValueError(f"radius must be positive, got {radius}")
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    d2 = ((samples[:, None, :] - modes[None, :, :]) ** 2).sum(axis=-1)
    hist = np.bincount(d2.argmin(axis=1), minlength=len(modes))
    covered = int((d2.min(axis=0) <= radius * radius).sum())
    return covered, hist


@dataclass
class HeatmapReport:
    label_affinity: np.ndarray
    model_affinity: np.ndarray
    raw_affinity: np.ndarray
    frobenius_gap: float
    denoised: np.ndarray


def soft_assignments(points: np.ndarray, centers: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    """Row softmax of ``-||p - c_k||^2 / temperature``."""
    logits = -((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=-1) / temperature
    logits -= logits.max(axis=1, keepdims=True)
    w = np.exp(logits)
    return w / w.sum(axis=1, keepdims=True)


def affinity_report(labels, predictions: np.ndarray, n_classes: int, denoised=None) -> HeatmapReport:
    labels = np.asarray(labels)
    onehot = np.eye(n_classes)[labels]
    label_aff = onehot @ onehot.T
    raw = onehot @ predictions.T
    model_aff = 0.5 * (raw + raw.T)
    gap = float(np.linalg.norm(label_aff - model_aff))
    return HeatmapReport(label_aff, model_aff, raw, gap, denoised)


def heatmap_analysis(model: Denoiser, x0, labels, centers, t: float = 0.5, seed: int = 0,
                     schedule: NoiseSchedule | None = None, temperature: float = 1.0) -> HeatmapReport:
    """Compare label affinity with the affinity implied by denoised predictions.

    ``x0`` is noised to time ``t``, denoised, and each prediction is softly
    assigned to the class centers.
    """
    if labels is None:
        raise ValueError("heatmap analysis needs labeled samples")
    schedule = schedule or NoiseSchedule()
    x0 = np.asarray(x0, dtype=np.float64)
    centers = np.asarray(centers, dtype=np.float64)
    eps = make_stream(seed, "noise").standard_normal(x0.shape)
    xt = schedule.alpha(t) * x0 + schedule.sigma(t) * eps
    x_hat = denoise_array(model, xt, t)
    return affinity_report(labels, soft_assignments(x_hat, centers, temperature), len(centers), x_hat)

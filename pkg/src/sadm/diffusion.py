"""Continuous-time variance-preserving forward diffusion."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .models import denoise

T_MIN = 1e-3
T_MAX = 1.0 - 1e-3

WeightFn = Callable[[float], float]


def constant_weight(lam: float) -> float:
    return 1.0


@dataclass(frozen=True)
class NoiseSchedule:
    """Cosine schedule ``alpha = cos(pi t / 2)``, ``sigma = sin(pi t / 2)``.

    ``t_max`` is where samplers start and where training times are drawn up
    to; the schedule itself is defined on ``[t_min, 1]``.
    """

    kind: str = "cosine"
    t_min: float = T_MIN
    t_max: float = T_MAX

    def __post_init__(self):
        if self.kind != "cosine":
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if not 0.0 < self.t_min <= 0.1:
            raise ValueError(f"t_min must lie in (0, 0.1], got {self.t_min}")
        if not self.t_min < self.t_max <= 1.0:
            raise ValueError(f"t_max must lie in (t_min, 1], got {self.t_max}")

    def check(self, t: float) -> float:
        t = float(t)
        if not self.t_min <= t <= 1.0:
            raise ValueError(f"t={t!r} outside [{self.t_min}, 1]")
        return t

    def alpha(self, t: float) -> float:
        return math.cos(0.5 * math.pi * self.check(t))

    def sigma(self, t: float) -> float:
        return math.sin(0.5 * math.pi * self.check(t))

    def log_snr(self, t: float) -> float:
        a, s = self.alpha(t), self.sigma(t)
        return math.log(a * a / (s * s))

    lam = log_snr

    def dalpha(self, t: float) -> float:
        return -0.5 * math.pi * math.sin(0.5 * math.pi * self.check(t))

    def dsigma(self, t: float) -> float:
        return 0.5 * math.pi * math.cos(0.5 * math.pi * self.check(t))

    def sample_time(self, rng: np.random.Generator) -> float:
        return float(rng.uniform(self.t_min, self.t_max))

    def transition_params(self, s: float, t: float) -> tuple[float, float]:
        """Scale and variance of ``q(x_t | x_s)`` for ``s < t``."""
        s, t = self.check(s), self.check(t)
        if not s < t:
            raise ValueError(f"transition needs s < t, got s={s!r}, t={t!r}")
        ratio = self.alpha(t) / self.alpha(s)
        # expm1 keeps the variance accurate as s -> t
        var = -math.expm1(self.log_snr(t) - self.log_snr(s)) * self.sigma(t) ** 2
        return ratio, var


@dataclass
class DiffusionBatch:
    x0: np.ndarray
    t: float
    eps: np.ndarray
    xt: np.ndarray


def perturb(schedule: NoiseSchedule, x0, t: float, eps) -> DiffusionBatch:
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if x0.shape != eps.shape:
        raise ValueError(f"x0 shape {x0.shape} != eps shape {eps.shape}")
    t = schedule.check(t)
    xt = schedule.alpha(t) * x0 + schedule.sigma(t) * eps
    return DiffusionBatch(x0=x0, t=t, eps=eps, xt=xt)


def draw_batch(schedule: NoiseSchedule, x0, rng_noise: np.random.Generator,
               rng_time: np.random.Generator) -> DiffusionBatch:
    """One training draw: a single ``t`` shared by the batch, fresh Gaussian noise."""
    x0 = np.asarray(x0, dtype=np.float64)
    t = schedule.sample_time(rng_time)
    eps = rng_noise.standard_normal(x0.shape)
    return perturb(schedule, x0, t, eps)


def weighted_mse(x0, x_hat, weight: float = 1.0) -> Tensor:
    """``weight * mean_i ||x0_i - x_hat_i||^2`` over the batch rows."""
    diff = ad.sub(ad.as_tensor(x0), x_hat)
    n = diff.shape[0]
    return ad.scale(ad.squared_l2(diff), weight / n)


def dsm_loss(model, batch: DiffusionBatch, schedule: NoiseSchedule | None = None,
             weight: WeightFn = constant_weight) -> Tensor:
    """Instance-level denoising loss for ``model`` on ``batch``."""
    schedule = schedule or NoiseSchedule()
    x_hat = denoise(model, batch.xt, batch.t)
    return weighted_mse(batch.x0, x_hat, weight(schedule.log_snr(batch.t)))

"""Ancestral and Heun probability-flow samplers driven by an x-prediction.

Both samplers take ``predict(x, t) -> x_hat``; a trained ``Denoiser`` is
adapted with :func:`model_predictor`, and analytic oracles can be passed in
directly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .diffusion import NoiseSchedule
from .models import Denoiser, denoise_array
from .rng import make_stream

Predictor = Callable[[np.ndarray, float], np.ndarray]


class SamplerError(ValueError):
    pass


@dataclass
class SamplerConfig:
    kind: str = "ancestral"
    nfe: int | None = None
    seed: int = 0
    t_grid: list[float] | None = None

    def __post_init__(self):
        if self.kind not in ("ancestral", "heun_ode"):
            raise SamplerError(f"unknown sampler kind {self.kind!r}")
        if self.nfe is None:
            self.nfe = 250 if self.kind == "ancestral" else 35
        if self.nfe < 1:
            raise SamplerError(f"nfe must be positive, got {self.nfe}")
        if self.kind == "heun_ode" and self.nfe % 2 == 0:
            raise SamplerError(f"Heun uses 2k-1 evaluations for k intervals; nfe must be odd, got {self.nfe}")


class CountingPredictor:
    def __init__(self, fn: Predictor):
        self.fn = fn
        self.calls = 0

    def __call__(self, x: np.ndarray, t: float) -> np.ndarray:
        self.calls += 1
        out = self.fn(x, t)
        if not np.isfinite(out).all():
            raise SamplerError(f"denoiser produced non-finite output at t={t}")
        return out


def model_predictor(model: Denoiser) -> Predictor:
    for p in model.parameters():
        if not np.isfinite(p.data).all():
            raise SamplerError("model parameters contain non-finite values")
    return lambda x, t: denoise_array(model, x, t)


def time_grid(schedule: NoiseSchedule, n_points: int, grid: list[float] | None = None) -> np.ndarray:
    if grid is not None:
        g = np.asarray(grid, dtype=np.float64)
        if g.ndim != 1 or len(g) != n_points:
            raise SamplerError(f"t_grid must have {n_points} points, got {len(g)}")
        if np.any(np.diff(g) >= 0):
            raise SamplerError("t_grid must be strictly decreasing")
        if g[-1] < schedule.t_min or g[0] > 1.0:
            raise SamplerError("t_grid endpoints outside the schedule domain")
        return g
    if n_points == 1:
        return np.array([schedule.t_max])
    return np.linspace(schedule.t_max, schedule.t_min, n_points)


def ancestral_sample(predict: Predictor | Denoiser, schedule: NoiseSchedule, cfg: SamplerConfig, n: int,
                     dim: int | None = None, return_latent: bool = False) -> np.ndarray:
    """Reverse the forward process with the Gaussian posterior at each grid step.

    With ``return_latent`` the state at the last grid time is returned
    instead of the final prediction.
    """
    if cfg.kind != "ancestral":
        raise SamplerError(f"config kind is {cfg.kind!r}, expected 'ancestral'")
    predict, dim = _resolve(predict, dim)
    rng = make_stream(cfg.seed, "sampler")
    grid = time_grid(schedule, cfg.nfe, cfg.t_grid)
    x = rng.standard_normal((n, dim))
    x_hat = None
    for k, t in enumerate(grid):
        x_hat = predict(x, float(t))
        if k == len(grid) - 1:
            break
        s = float(grid[k + 1])
        a_ts, var_ts = schedule.transition_params(s, float(t))
        a_s, sig_s, sig_t = schedule.alpha(s), schedule.sigma(s), schedule.sigma(float(t))
        mean = (a_ts * sig_s**2 / sig_t**2) * x + (a_s * var_ts / sig_t**2) * x_hat
        std = np.sqrt(var_ts * sig_s**2 / sig_t**2)
        x = mean + std * rng.standard_normal((n, dim))
    return x if return_latent else x_hat


def pf_ode_drift(schedule: NoiseSchedule, x: np.ndarray, x_hat: np.ndarray, t: float) -> np.ndarray:
    """Probability-flow velocity ``alpha' x_hat + sigma' (x - alpha x_hat) / sigma``.

    Algebraically equal to ``f x - g^2 s / 2`` with ``f = dlog(alpha)/dt``,
    ``g^2 = dsigma^2/dt - 2 f sigma^2`` and score ``s = (alpha x_hat - x) / sigma^2``,
    but free of the large cancelling terms near ``t = 1``.
    """
    a, s = schedule.alpha(t), schedule.sigma(t)
    return schedule.dalpha(t) * x_hat + schedule.dsigma(t) * (x - a * x_hat) / s


def heun_ode_sample(predict: Predictor | Denoiser, schedule: NoiseSchedule, cfg: SamplerConfig, n: int,
                    dim: int | None = None, x_init: np.ndarray | None = None) -> np.ndarray:
    """Integrate the probability-flow ODE from ``t_max`` to ``t_min``.

    Heun steps (Euler predictor, trapezoidal corrector) on every interval
    except the last, which is a plain Euler step: ``2k - 1`` evaluations for
    ``k`` intervals.
    """
    if cfg.kind != "heun_ode":
        raise SamplerError(f"config kind is {cfg.kind!r}, expected 'heun_ode'")
    predict, dim = _resolve(predict, dim)
    k = (cfg.nfe + 1) // 2
    grid = time_grid(schedule, k + 1, cfg.t_grid)
    if x_init is None:
        x = make_stream(cfg.seed, "sampler").standard_normal((n, dim))
    else:
        x = np.array(x_init, dtype=np.float64)
    for i in range(k):
        t, t_next = float(grid[i]), float(grid[i + 1])
        h = t_next - t
        d = pf_ode_drift(schedule, x, predict(x, t), t)
        x_euler = x + h * d
        if i == k - 1:
            x = x_euler
        else:
            d_next = pf_ode_drift(schedule, x_euler, predict(x_euler, t_next), t_next)
            x = x + 0.5 * h * (d + d_next)
    return x


def sample(predict: Predictor | Denoiser, schedule: NoiseSchedule, cfg: SamplerConfig, n: int,
           dim: int | None = None) -> np.ndarray:
    if cfg.kind == "ancestral":
        return ancestral_sample(predict, schedule, cfg, n, dim)
    return heun_ode_sample(predict, schedule, cfg, n, dim)


def _resolve(predict, dim):
    if isinstance(predict, Denoiser):
        predict, dim = model_predictor(predict), predict.dim
    elif dim is None:
        raise SamplerError("dim is required when sampling from a bare predictor")
    return (predict if isinstance(predict, CountingPredictor) else _checked(predict)), dim


def _checked(fn: Predictor) -> Predictor:
    def predict(x, t):
        out = fn(x, t)
        if not np.isfinite(out).all():
            raise SamplerError(f"denoiser produced non-finite output at t={t}")
        return out

    return predict


def gaussian_oracle(schedule: NoiseSchedule, mean, var) -> Predictor:
    """Exact posterior mean ``E[x0 | x_t]`` for data ``N(mean, diag(var))``."""
    mean = np.asarray(mean, dtype=np.float64)
    var = np.asarray(var, dtype=np.float64)

    def predict(x, t):
        a, s = schedule.alpha(t), schedule.sigma(t)
        gain = a * var / (a * a * var + s * s)
        return mean + gain * (x - a * mean)

    return predict


def gaussian_flow_solution(schedule: NoiseSchedule, mean, var, x_start, t_start: float, t_end: float) -> np.ndarray:
    """Exact probability-flow map between two times for Gaussian data."""
    mean = np.asarray(mean, dtype=np.float64)
    var = np.asarray(var, dtype=np.float64)
    a0, s0 = schedule.alpha(t_start), schedule.sigma(t_start)
    a1, s1 = schedule.alpha(t_end), schedule.sigma(t_end)
    ratio = np.sqrt((a1 * a1 * var + s1 * s1) / (a0 * a0 * var + s0 * s0))
    return a1 * mean + ratio * (np.asarray(x_start) - a0 * mean)

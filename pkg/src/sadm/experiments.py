"""Composite experiments: evaluation, the three-mode ablation and fine-tuning transfer."""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from . import autodiff as ad
from .config import ExperimentConfig
from .datasets import DatasetError, DatasetSpec, mode_centers, sample, target_spec
from .diffusion import NoiseSchedule, perturb, weighted_mse
from .metrics import heatmap_analysis, mode_coverage, sliced_wasserstein
from .models import Denoiser, denoise, init_denoiser, init_encoder
from .rng import make_stream
from .sampler import SamplerConfig, sample as draw_samples
from .structure import structural_loss
from .trainer import MODES, FinetuneConfig, TrainState, finetune, run_training

HELDOUT_STREAM = "heldout"


def heldout(spec: DatasetSpec, n: int):
    return sample(spec, n, stream=HELDOUT_STREAM)


def generate(model: Denoiser, cfg: ExperimentConfig, n: int | None = None, seed: int | None = None) -> np.ndarray:
    sc = cfg.sampler_config()
    if seed is not None:
        sc = replace(sc, seed=seed)
    return draw_samples(model, NoiseSchedule(), sc, n or cfg.sampler.n_samples)


def heatmap_gap(model: Denoiser, spec: DatasetSpec, cfg: ExperimentConfig, seed: int) -> float:
    """Mean Frobenius gap over ``eval.heatmap_batches`` labeled batches."""
    centers = mode_centers(spec)
    e = cfg.eval
    gaps = []
    for b in range(e.heatmap_batches):
        x0, labels = sample(spec, e.heatmap_batch_size, stream=f"heatmap/{b}")
        rep = heatmap_analysis(model, x0, labels, centers, e.heatmap_t, seed * 1000 + b,
                               temperature=e.heatmap_temperature)
        gaps.append(rep.frobenius_gap)
    return float(np.mean(gaps))


def evaluate(model: Denoiser, cfg: ExperimentConfig, spec: DatasetSpec | None = None,
             seed: int | None = None) -> dict:
    """Sliced-W to held-out data, plus mode coverage and heatmap gap where the data has modes."""
    seed = cfg.seed if seed is None else seed
    spec = spec or cfg.dataset(seed)
    real, _ = heldout(spec, cfg.eval.n_heldout)
    fake = generate(model, cfg, seed=seed)
    out = {"sliced_w": sliced_wasserstein(fake, real, cfg.eval.n_proj, seed)}
    try:
        centers = mode_centers(spec)
    except DatasetError:
        return out
    covered, _ = mode_coverage(fake, centers, cfg.eval.coverage_radius)
    out["mode_coverage"] = covered
    out["heatmap_gap"] = heatmap_gap(model, spec, cfg, seed)
    return out


@dataclass
class AblationResult:
    rows: list[dict] = field(default_factory=list)
    states: dict = field(default_factory=dict)

    def values(self, mode: str, key: str = "sliced_w") -> list[float]:
        return [r[key] for r in self.rows if r["mode"] == mode]


def run_ablation(cfg: ExperimentConfig, seeds, modes=MODES, keep_states: bool = False,
                 progress: Callable[[dict], None] | None = None) -> AblationResult:
    """Train and evaluate every mode on every seed; seeds are shared across modes."""
    res = AblationResult()
    for seed in seeds:
        spec = cfg.dataset(seed)
        data, _ = sample(spec, cfg.data.n_train)
        for mode in modes:
            start = time.perf_counter()
            tc = replace(cfg.train_config(), mode=mode, seed=seed)
            state, _ = run_training(tc, data, model_kwargs=cfg.model_kwargs())
            row = {"seed": seed, "mode": mode, **evaluate(state.denoiser, cfg, spec, seed),
                   "seconds": time.perf_counter() - start}
            res.rows.append(row)
            if keep_states:
                res.states[(seed, mode)] = state
            if progress is not None:
                progress(row)
    return res


def ablation_table(res: AblationResult, modes=MODES) -> str:
    lines = [f"{'mode':<18}{'sliced_W':>12}{'mode_coverage':>16}{'heatmap_gap':>14}"]
    for mode in modes:
        rows = [r for r in res.rows if r["mode"] == mode]
        if not rows:
            continue
        sw = np.mean([r["sliced_w"] for r in rows])
        cov = np.mean([r.get("mode_coverage", np.nan) for r in rows])
        gap = np.mean([r.get("heatmap_gap", np.nan) for r in rows])
        lines.append(f"{mode:<18}{sw:>12.4f}{cov:>16.2f}{gap:>14.4f}")
    return "\n".join(lines)


def finetune_transfer(pretrained: TrainState, cfg: ExperimentConfig, target: str, freeze_mask: str,
                      seed: int) -> dict:
    """Target sliced-W of the pretrained model before and after fine-tuning."""
    spec = target_spec(target, seed)
    data, _ = sample(spec, cfg.data.n_train)
    before = evaluate(pretrained.denoiser, cfg, spec, seed)["sliced_w"]
    ft = replace(cfg.finetune_config(), freeze_mask=freeze_mask, seed=seed)
    state, _ = finetune(pretrained, data, ft, base=pretrained.config)
    after = evaluate(state.denoiser, cfg, spec, seed)["sliced_w"]
    return {"target": target, "freeze_mask": freeze_mask, "seed": seed, "before": before, "after": after}


def finetune_config_for(cfg: ExperimentConfig, freeze_mask: str, seed: int) -> FinetuneConfig:
    return replace(cfg.finetune_config(), freeze_mask=freeze_mask, seed=seed)


def sadm_gradcheck(seed: int = 0, batch_size: int = 4, t: float = 0.3, relation: str = "cosine",
                   distance: str = "l2_sq", struct_weight: float = 1.0, eps: float = 1e-6) -> float:
    """Finite-difference check of the combined instance + structural loss over all of theta and phi.

    The denoiser's zero-initialised output layer is replaced by small random
    values so that every layer receives a nonzero gradient.
    """
    rng = make_stream(seed, "eval")
    den = init_denoiser(seed)
    den.weights[-1].data = 0.1 * rng.standard_normal(den.weights[-1].shape)
    den.biases[-1].data = 0.1 * rng.standard_normal(den.biases[-1].shape)
    enc = init_encoder(seed)
    x0, _ = sample(DatasetSpec(seed=seed), batch_size, stream="eval")
    batch = perturb(NoiseSchedule(), x0, t, rng.standard_normal(x0.shape))

    def loss(*_params):
        x_hat = denoise(den, batch.xt, t)
        struct = structural_loss(batch.x0, x_hat, t, enc, relation, distance)
        return ad.add(weighted_mse(batch.x0, x_hat, 1.0), ad.scale(struct, struct_weight))

    return ad.grad_check(loss, den.parameters() + enc.parameters(), eps)

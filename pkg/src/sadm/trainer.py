"""Structure-guided adversarial training loop.

Phase 1 trains the denoiser against the instance loss plus the structural
loss under a frozen encoder. The adversarial phase then alternates rounds of
encoder ascent and denoiser descent on the same objective.
"""

from __future__ import annotations

import contextlib
import time
from dataclasses import asdict, dataclass, replace
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import NonFiniteError, Tape, Tensor
from .diffusion import DiffusionBatch, NoiseSchedule, constant_weight, perturb, weighted_mse
from .models import Denoiser, Encoder, denoise, denoise_array, init_denoiser, init_encoder
from .rng import Streams, make_stream
from .structure import Distance, Relation, structural_loss

MODES = ("instance_only", "structure_guided", "full_sadm")
FREEZE_MASKS = ("none", "biases_only")


class TrainingDivergence(RuntimeError):
    """A loss, activation or parameter update became non-finite."""

    def __init__(self, step: int, t: float, detail: str = ""):
        super().__init__(f"non-finite value at step {step} (t={t!r}){': ' + detail if detail else ''}")
        self.step = step
        self.t = t


class PhaseError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    batch_size: int = 64
    lr_theta: float = 1e-4
    lr_phi: float = 1e-4
    phase1_steps: int = 20000
    phase1_tolerance: float | None = None
    phase1_window: int = 500
    adversarial_rounds: int = 3
    steps_per_round_theta: int = 2000
    steps_per_round_phi: int = 500
    seed: int = 0
    relation: str = "cosine"
    distance: str = "l2_sq"
    struct_weight: float = 0.1
    mode: str = "full_sadm"
    exclude_diagonal: bool = False
    shared_batch_per_iteration: bool = False
    freeze_mask: str = "none"
    checkpoint_every: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.batch_size < 2:
            raise ValueError("batch_size ≥ 2 required (pairwise relations need two samples)")
        if self.adversarial_rounds < 0:
            raise ValueError("adversarial_rounds must be >= 0")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.freeze_mask not in FREEZE_MASKS:
            raise ValueError(f"freeze_mask must be one of {FREEZE_MASKS}, got {self.freeze_mask!r}")
        Relation(self.relation)
        Distance(self.distance)
        for name in ("phase1_steps", "phase1_window", "steps_per_round_theta", "steps_per_round_phi",
                     "checkpoint_every"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.phase1_window < 1:
            raise ValueError("phase1_window must be >= 1")
        if self.lr_theta <= 0 or self.lr_phi <= 0:
            raise ValueError("learning rates must be positive")


class Adam:
    """Adam over a fixed list of tensors; ``mask`` selects the ones it may move."""

    def __init__(self, params: list[Tensor], lr: float, betas=(0.9, 0.999), eps: float = 1e-8,
                 mask: list[bool] | None = None):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.mask = list(mask) if mask is not None else [True] * len(params)
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]
        self.t = 0

    def step(self, grads: ad.Gradients) -> None:
        """One update of every unmasked tensor; nothing changes if any result is non-finite."""
        t = self.t + 1
        c1 = 1.0 - self.b1 ** t
        c2 = 1.0 - self.b2 ** t
        updates = []
        with np.errstate(over="ignore", invalid="ignore"):
            for i, p in enumerate(self.params):
                if not self.mask[i]:
                    continue
                g = grads.get(p)
                if g is None:
                    g = np.zeros_like(p.data)
                m = self.b1 * self.m[i] + (1.0 - self.b1) * g
                v = self.b2 * self.v[i] + (1.0 - self.b2) * (g * g)
                new = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
                if not (np.isfinite(m).all() and np.isfinite(v).all() and np.isfinite(new).all()):
                    raise NonFiniteError(f"Adam update of parameter {i} is non-finite")
                updates.append((i, m, v, new))
        self.t = t
        for i, m, v, new in updates:
            self.m[i], self.v[i] = m, v
            self.params[i].data = new

    def hyper(self) -> dict:
        return {"lr": self.lr, "betas": [self.b1, self.b2], "eps": self.eps, "t": self.t, "mask": self.mask}


def param_mask(model: Denoiser, freeze_mask: str) -> list[bool]:
    if freeze_mask == "biases_only":
        return [i % 2 == 1 for i in range(len(model.parameters()))]
    return [True] * len(model.parameters())


@dataclass
class TrainState:
    config: TrainConfig
    denoiser: Denoiser
    encoder: Encoder
    opt_theta: Adam
    opt_phi: Adam
    streams: Streams
    step: int = 0
    phase: str = "phase1"
    round: int = 0
    phase_step: int = 0
    round_pos: int = 0
    prev_window_mean: float | None = None
    stream_prefix: str = ""
    pending_batch: DiffusionBatch | None = None

    def rng(self, name: str) -> np.random.Generator:
        return self.streams[self.stream_prefix + name]

    @property
    def done(self) -> bool:
        return self.phase == "done"


def new_state(cfg: TrainConfig, dim: int, hidden: int = 64, n_freqs: int = 8, enc_hidden: int = 32,
              embed_dim: int = 8) -> TrainState:
    den = init_denoiser(cfg.seed, dim=dim, hidden=hidden, n_freqs=n_freqs)
    enc = init_encoder(cfg.seed, dim=dim, hidden=enc_hidden, embed_dim=embed_dim, frozen=True)
    return TrainState(
        config=cfg,
        denoiser=den,
        encoder=enc,
        opt_theta=Adam(den.parameters(), cfg.lr_theta, mask=param_mask(den, cfg.freeze_mask)),
        opt_phi=Adam(enc.parameters(), cfg.lr_phi),
        streams=Streams(cfg.seed),
    )


@contextlib.contextmanager
def _encoder_trainable(enc: Encoder, flag: bool):
    before = enc.frozen
    enc.set_frozen(not flag)
    try:
        yield
    finally:
        enc.set_frozen(before)


def _uses_structure(cfg: TrainConfig) -> bool:
    return cfg.mode != "instance_only" and cfg.struct_weight != 0.0


def _check(value: float, state: TrainState, t: float) -> None:
    if not np.isfinite(value):
        raise TrainingDivergence(state.step + 1, t)


def _apply(opt: Adam, grads: ad.Gradients, state: TrainState, t: float) -> None:
    try:
        opt.step(grads)
    except NonFiniteError as exc:
        raise TrainingDivergence(state.step + 1, t, str(exc)) from exc


def generator_step(state: TrainState, batch: DiffusionBatch, schedule: NoiseSchedule | None = None,
                   weight=constant_weight) -> dict:
    """One Adam step on the denoiser; the encoder is held fixed.

    Returns the per-term losses evaluated before the update.
    """
    cfg = state.config
    schedule = schedule or NoiseSchedule()
    use_struct = _uses_structure(cfg)
    try:
        # overflow surfaces as NonFiniteError from the tape, not as a warning
        with _encoder_trainable(state.encoder, False), Tape() as tape, np.errstate(over="ignore", invalid="ignore"):
            x_hat = denoise(state.denoiser, batch.xt, batch.t)
            l_dsm = weighted_mse(batch.x0, x_hat, weight(schedule.log_snr(batch.t)))
            total = l_dsm
            l_struct = None
            if use_struct:
                l_struct = structural_loss(batch.x0, x_hat, batch.t, state.encoder, cfg.relation,
                                           cfg.distance, cfg.exclude_diagonal, schedule.t_min)
                total = ad.add(l_dsm, ad.scale(l_struct, cfg.struct_weight))
        grads = tape.backward(total)
    except NonFiniteError as exc:
        raise TrainingDivergence(state.step + 1, batch.t, str(exc)) from exc
    _check(total.item(), state, batch.t)
    _apply(state.opt_theta, grads, state, batch.t)
    state.step += 1
    return {"loss_dsm": l_dsm.item(), "loss_struct": 0.0 if l_struct is None else l_struct.item(),
            "loss_total": total.item()}


def discriminator_step(state: TrainState, batch: DiffusionBatch, schedule: NoiseSchedule | None = None,
                       weight=constant_weight) -> dict:
    """One Adam ascent step on the encoder; the denoiser is held fixed."""
    if state.phase != "adversarial":
        raise PhaseError(f"discriminator_step is illegal in {state.phase}: the encoder is frozen")
    cfg = state.config
    schedule = schedule or NoiseSchedule()
    try:
        with np.errstate(over="ignore", invalid="ignore"):
            x_hat = denoise_array(state.denoiser, batch.xt, batch.t)
        with _encoder_trainable(state.encoder, True), Tape() as tape, np.errstate(over="ignore", invalid="ignore"):
            l_struct = structural_loss(batch.x0, Tensor(x_hat), batch.t, state.encoder, cfg.relation,
                                       cfg.distance, cfg.exclude_diagonal, schedule.t_min)
            objective = ad.neg(l_struct)
        grads = tape.backward(objective)
    except NonFiniteError as exc:
        raise TrainingDivergence(state.step + 1, batch.t, str(exc)) from exc
    _check(l_struct.item(), state, batch.t)
    _apply(state.opt_phi, grads, state, batch.t)
    state.step += 1
    l_dsm = weight(schedule.log_snr(batch.t)) * float(((batch.x0 - x_hat) ** 2).sum()) / len(x_hat)
    return {"loss_dsm": l_dsm, "loss_struct": l_struct.item(),
            "loss_total": l_dsm + cfg.struct_weight * l_struct.item()}


def draw(state: TrainState, data: np.ndarray, schedule: NoiseSchedule) -> DiffusionBatch:
    """Minibatch with replacement, one shared time, fresh standard-normal noise."""
    idx = state.rng("batch").integers(0, len(data), size=state.config.batch_size)
    x0 = data[idx]
    t = schedule.sample_time(state.rng("time"))
    eps = state.rng("noise").standard_normal(x0.shape)
    return perturb(schedule, x0, t, eps)


def _round_actions(cfg: TrainConfig) -> list[tuple[str, bool]]:
    """Ordered (kind, reuse_previous_batch) actions making up one adversarial round."""
    p, q = cfg.steps_per_round_phi, cfg.steps_per_round_theta
    if not cfg.shared_batch_per_iteration:
        return [("disc", False)] * p + [("gen", False)] * q
    actions = []
    for i in range(max(p, q)):
        if i < p:
            actions.append(("disc", False))
        if i < q:
            actions.append(("gen", i < p))
    return actions


MONITOR_SIZE = 512
MONITOR_TIMES = 16


def monitor_loss(state: TrainState, data: np.ndarray, schedule: NoiseSchedule) -> float:
    """Instance loss on a fixed probe set: same points, noise and time grid every call.

    Drawn from its own stream, so consecutive windows are compared without
    minibatch or time-sampling noise.
    """
    rng = make_stream(state.config.seed, state.stream_prefix + "monitor")
    x0 = data[rng.integers(0, len(data), size=MONITOR_SIZE)]
    eps = rng.standard_normal((MONITOR_TIMES,) + x0.shape)
    total = 0.0
    for k, t in enumerate(np.linspace(schedule.t_min, schedule.t_max, MONITOR_TIMES)):
        xt = schedule.alpha(t) * x0 + schedule.sigma(t) * eps[k]
        total += float(((denoise_array(state.denoiser, xt, float(t)) - x0) ** 2).sum()) / len(x0)
    return total / MONITOR_TIMES


def _phase1_finished(state: TrainState, data: np.ndarray, schedule: NoiseSchedule) -> bool:
    cfg = state.config
    if state.phase_step >= cfg.phase1_steps:
        return True
    if cfg.phase1_tolerance is None or state.phase_step == 0 or state.phase_step % cfg.phase1_window:
        return False
    cur = monitor_loss(state, data, schedule)
    prev = state.prev_window_mean
    state.prev_window_mean = cur
    return prev is not None and (prev - cur) / abs(prev) < cfg.phase1_tolerance


def _advance(state: TrainState, data: np.ndarray, schedule: NoiseSchedule) -> None:
    """Move the phase pointer past finished stages."""
    cfg = state.config
    if state.phase == "phase1" and _phase1_finished(state, data, schedule):
        rounds = cfg.adversarial_rounds if cfg.mode == "full_sadm" else 0
        state.phase = "adversarial" if rounds > 0 else "done"
        state.round = 1 if rounds > 0 else 0
        state.round_pos = 0
    if state.phase == "adversarial":
        actions = _round_actions(cfg)
        while state.phase == "adversarial" and state.round_pos >= len(actions):
            state.round += 1
            state.round_pos = 0
            if state.round > cfg.adversarial_rounds:
                state.phase = "done"


LOG_FIELDS = ("step", "phase", "round", "t", "loss_dsm", "loss_struct", "loss_total", "wall_ms")


def run_training(cfg: TrainConfig | None, data: np.ndarray, state: TrainState | None = None,
                 on_step: Callable[[dict], None] | None = None,
                 on_checkpoint: Callable[[TrainState], None] | None = None,
                 schedule: NoiseSchedule | None = None, model_kwargs: dict | None = None,
                 wall_time: bool = False, max_steps: int | None = None) -> tuple[TrainState, list[dict]]:
    """Run (or resume) the two-phase protocol until done.

    ``on_step`` receives each log row as soon as its optimizer step is
    taken. ``max_steps`` stops early after that many total steps, leaving the
    state resumable.
    """
    schedule = schedule or NoiseSchedule()
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2:
        raise ValueError(f"dataset must be (n, d), got shape {data.shape}")
    if state is None:
        state = new_state(cfg, data.shape[1], **(model_kwargs or {}))
    if state.denoiser.dim != data.shape[1]:
        raise ValueError(f"dataset dimension {data.shape[1]} != model dimension {state.denoiser.dim}")
    cfg = state.config
    rows: list[dict] = []
    if state.phase == "phase1" and state.phase_step >= cfg.phase1_steps:
        _advance(state, data, schedule)
    while not state.done and (max_steps is None or state.step < max_steps):
        start = time.perf_counter()
        if state.phase == "phase1":
            batch = draw(state, data, schedule)
            losses = generator_step(state, batch, schedule)
            state.phase_step += 1
            phase_name, rnd = "phase1", 0
        else:
            kind, reuse = _round_actions(cfg)[state.round_pos]
            batch = state.pending_batch if reuse and state.pending_batch is not None else draw(state, data, schedule)
            rnd = state.round
            if kind == "disc":
                losses = discriminator_step(state, batch, schedule)
                state.pending_batch = batch if cfg.shared_batch_per_iteration else None
                phase_name = "adversarial_phi"
            else:
                losses = generator_step(state, batch, schedule)
                state.pending_batch = None
                phase_name = "adversarial_theta"
            state.round_pos += 1
        row = {"step": state.step, "phase": phase_name, "round": rnd, "t": batch.t, **losses,
               "wall_ms": (time.perf_counter() - start) * 1e3 if wall_time else 0.0}
        rows.append(row)
        if on_step is not None:
            on_step(row)
        _advance(state, data, schedule)
        if on_checkpoint is not None and cfg.checkpoint_every and state.step % cfg.checkpoint_every == 0:
            on_checkpoint(state)
    return state, rows


@dataclass
class FinetuneConfig:
    sg_steps: int = 6000
    adv_steps: int = 1000
    freeze_mask: str = "none"
    seed: int = 0

    def __post_init__(self):
        if self.sg_steps < 0 or self.adv_steps < 0:
            raise ValueError("fine-tuning step counts must be >= 0")
        if self.freeze_mask not in FREEZE_MASKS:
            raise ValueError(f"freeze_mask must be one of {FREEZE_MASKS}, got {self.freeze_mask!r}")


def _clone_mlp(m):
    params = [Tensor(p.data, requires_grad=p.requires_grad) for p in m.parameters()]
    return replace(m, weights=params[0::2], biases=params[1::2])


def finetune(pretrained: TrainState, target: np.ndarray, ft: FinetuneConfig, base: TrainConfig | None = None,
             **kwargs) -> tuple[TrainState, list[dict]]:
    """Continue training a pretrained state on ``target`` with the two-phase structure.

    ``adv_steps`` denoiser steps are split evenly over the adversarial rounds,
    each preceded by encoder steps in the base config's phi:theta proportion.
    """
    target = np.asarray(target, dtype=np.float64)
    if target.ndim != 2 or target.shape[1] != pretrained.denoiser.dim:
        raise ValueError(f"target dimension {target.shape[-1]} != checkpoint dimension {pretrained.denoiser.dim}")
    base = base or pretrained.config
    rounds = base.adversarial_rounds if ft.adv_steps > 0 else 0
    theta_per_round = ft.adv_steps // rounds if rounds else 0
    phi_per_round = 0
    if theta_per_round and base.steps_per_round_theta:
        phi_per_round = max(1, theta_per_round * base.steps_per_round_phi // base.steps_per_round_theta)
    cfg = replace(base, mode="full_sadm", phase1_steps=ft.sg_steps, phase1_tolerance=None,
                  adversarial_rounds=rounds, steps_per_round_theta=theta_per_round,
                  steps_per_round_phi=phi_per_round, freeze_mask=ft.freeze_mask, seed=ft.seed)
    den = _clone_mlp(pretrained.denoiser)
    enc = _clone_mlp(pretrained.encoder)
    enc.set_frozen(True)
    state = TrainState(
        config=cfg, denoiser=den, encoder=enc,
        opt_theta=Adam(den.parameters(), cfg.lr_theta, mask=param_mask(den, ft.freeze_mask)),
        opt_phi=Adam(enc.parameters(), cfg.lr_phi),
        streams=Streams(ft.seed), stream_prefix="finetune/",
    )
    return run_training(cfg, target, state=state, **kwargs)


def config_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)

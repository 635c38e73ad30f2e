"""scikit-learn style wrapper around the trainer, sampler and metrics."""

from __future__ import annotations

from dataclasses import replace

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted, validate_data

from .autodiff import no_grad
from .diffusion import NoiseSchedule
from .metrics import sliced_wasserstein
from .models import denoise_array, embed
from .sampler import SamplerConfig, sample as draw_samples
from .trainer import TrainConfig, run_training


class SADM(TransformerMixin, BaseEstimator):
    """Diffusion model for low-dimensional point clouds with a learned structural term.

    ``fit`` runs the full training protocol on ``X`` of shape (n, d). After
    fitting, ``sample`` draws new points, ``score`` is the negative sliced
    Wasserstein distance to ``X`` (higher is better), ``transform`` gives the
    encoder's embeddings and ``denoise`` the model's clean-data estimate.
    """

    def __init__(self, mode: str = "full_sadm", batch_size: int = 64, lr_theta: float = 1e-4,
                 lr_phi: float = 1e-4, phase1_steps: int = 20000, adversarial_rounds: int = 3,
                 steps_per_round_theta: int = 2000, steps_per_round_phi: int = 500,
                 relation: str = "cosine", distance: str = "l2_sq", struct_weight: float = 0.1,
                 hidden: int = 64, n_freqs: int = 8, enc_hidden: int = 32, embed_dim: int = 8,
                 sampler: str = "ancestral", nfe: int | None = None, n_proj: int = 128,
                 random_state: int = 0):
        self.mode = mode
        self.batch_size = batch_size
        self.lr_theta = lr_theta
        self.lr_phi = lr_phi
        self.phase1_steps = phase1_steps
        self.adversarial_rounds = adversarial_rounds
        self.steps_per_round_theta = steps_per_round_theta
        self.steps_per_round_phi = steps_per_round_phi
        self.relation = relation
        self.distance = distance
        self.struct_weight = struct_weight
        self.hidden = hidden
        self.n_freqs = n_freqs
        self.enc_hidden = enc_hidden
        self.embed_dim = embed_dim
        self.sampler = sampler
        self.nfe = nfe
        self.n_proj = n_proj
        self.random_state = random_state

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            batch_size=self.batch_size, lr_theta=self.lr_theta, lr_phi=self.lr_phi,
            phase1_steps=self.phase1_steps, adversarial_rounds=self.adversarial_rounds,
            steps_per_round_theta=self.steps_per_round_theta, steps_per_round_phi=self.steps_per_round_phi,
            seed=self.random_state, relation=self.relation, distance=self.distance,
            struct_weight=self.struct_weight, mode=self.mode)

    def fit(self, X, y=None):
        X = validate_data(self, X, dtype=np.float64, ensure_min_samples=2)
        cfg = self._train_config()
        model_kwargs = {"hidden": self.hidden, "n_freqs": self.n_freqs, "enc_hidden": self.enc_hidden,
                        "embed_dim": self.embed_dim}
        self.state_, self.log_ = run_training(cfg, X, model_kwargs=model_kwargs)
        return self

    def _check_X(self, X) -> np.ndarray:
        check_is_fitted(self, "state_")
        return validate_data(self, X, dtype=np.float64, reset=False)

    def sample(self, n: int, random_state: int | None = None) -> np.ndarray:
        check_is_fitted(self, "state_")
        seed = self.random_state if random_state is None else random_state
        cfg = SamplerConfig(self.sampler, self.nfe, seed)
        return draw_samples(self.state_.denoiser, NoiseSchedule(), cfg, n, self.n_features_in_)

    def score(self, X, y=None) -> float:
        X = self._check_X(X)
        fake = self.sample(len(X))
        return -sliced_wasserstein(fake, X, self.n_proj, self.random_state)

    def transform(self, X) -> np.ndarray:
        X = self._check_X(X)
        with no_grad():
            return embed(self.state_.encoder, X).data

    def denoise(self, X, t: float) -> np.ndarray:
        X = self._check_X(X)
        return denoise_array(self.state_.denoiser, X, t)

    def training_config(self) -> TrainConfig:
        check_is_fitted(self, "state_")
        return replace(self.state_.config)

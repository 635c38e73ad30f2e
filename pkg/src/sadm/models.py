"""Time-conditioned MLP denoiser and the structure-discriminator encoder."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor
from .rng import make_stream


def time_features(t: float, n_freqs: int = 8) -> np.ndarray:
    """Sinusoidal features of a scalar time, frequencies 1..100 geometric."""
    freqs = np.geomspace(1.0, 100.0, n_freqs)
    return np.concatenate([np.sin(freqs * t), np.cos(freqs * t)])


@dataclass
class MLP:
    widths: list[int]
    weights: list[Tensor] = field(default_factory=list)
    biases: list[Tensor] = field(default_factory=list)

    def parameters(self) -> list[Tensor]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def n_params(self) -> int:
        return sum(p.size for p in self.parameters())


@dataclass
class Denoiser(MLP):
    """x-prediction network over ``concat(x_t, time_features(t))``."""

    dim: int = 2
    n_freqs: int = 8

    @property
    def hidden(self) -> int:
        return self.widths[1]

    def spec(self) -> dict:
        return {"kind": "denoiser", "dim": self.dim, "hidden": self.widths[1:-1], "n_freqs": self.n_freqs}


@dataclass
class Encoder(MLP):
    """tanh MLP projecting samples to the embedding space of the discriminator."""

    frozen: bool = False

    def set_frozen(self, frozen: bool) -> None:
        self.frozen = frozen
        for p in self.parameters():
            p.requires_grad = not frozen

    @property
    def embed_dim(self) -> int:
        return self.widths[-1]

    def spec(self) -> dict:
        return {"kind": "encoder", "widths": list(self.widths)}


def _uniform_layers(rng: np.random.Generator, widths: list[int],
                    random_bias: bool = False) -> tuple[list[Tensor], list[Tensor]]:
    if any(w <= 0 for w in widths):
        raise ValueError(f"layer widths must be positive, got {widths}")
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        bound = np.sqrt(3.0 / fan_in)
        weights.append(Tensor(rng.uniform(-bound, bound, size=(fan_in, fan_out)), requires_grad=True))
        bias = rng.uniform(-bound, bound, size=fan_out) if random_bias else np.zeros(fan_out)
        biases.append(Tensor(bias, requires_grad=True))
    return weights, biases


def init_denoiser(seed: int, dim: int = 2, hidden: int | list[int] = 64, n_freqs: int = 8) -> Denoiser:
    hidden = [hidden, hidden] if isinstance(hidden, int) else list(hidden)
    widths = [dim + 2 * n_freqs, *hidden, dim]
    weights, biases = _uniform_layers(make_stream(seed, "init_theta"), widths)
    weights[-1].data[:] = 0.0
    return Denoiser(widths=widths, weights=weights, biases=biases, dim=dim, n_freqs=n_freqs)


def init_encoder(seed: int, dim: int = 2, hidden: int | list[int] | None = 32, embed_dim: int = 8,
                 frozen: bool = False, random_bias: bool = True) -> Encoder:
    """Random tanh feature map.

    Biases are drawn like the weights by default so the origin does not map
    to the zero embedding, where cosine relations are singular. A zero-
    initialised denoiser predicts exactly the origin at step 0.
    """
    if hidden is None:
        hidden = []
    hidden = [hidden] if isinstance(hidden, int) else list(hidden)
    widths = [dim, *hidden, embed_dim]
    weights, biases = _uniform_layers(make_stream(seed, "init_phi"), widths, random_bias)
    enc = Encoder(widths=widths, weights=weights, biases=biases)
    enc.set_frozen(frozen)
    return enc


def denoise(model: Denoiser, xt, t: float) -> Tensor:
    xt = ad.as_tensor(xt)
    if xt.ndim != 2 or xt.shape[1] != model.dim:
        raise ShapeError(f"denoiser expects (batch, {model.dim}) input, got {xt.shape}")
    feats = np.broadcast_to(time_features(t, model.n_freqs), (xt.shape[0], 2 * model.n_freqs))
    h = ad.concat([xt, Tensor(feats)], axis=-1)
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        h = ad.add(ad.matmul(h, w), b)
        if i < last:
            h = ad.silu(h)
    return h


def embed(enc: Encoder, x) -> Tensor:
    x = ad.as_tensor(x)
    if x.ndim != 2 or x.shape[1] != enc.widths[0]:
        raise ShapeError(f"encoder expects (batch, {enc.widths[0]}) input, got {x.shape}")
    h = x
    for w, b in zip(enc.weights, enc.biases):
        h = ad.tanh(ad.add(ad.matmul(h, w), b))
    return h


def denoise_array(model: Denoiser, xt: np.ndarray, t: float) -> np.ndarray:
    """Untaped forward pass for sampling and evaluation."""
    with ad.no_grad():
        return denoise(model, xt, t).data

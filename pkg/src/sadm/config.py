"""Experiment configuration: nested sections, JSON files and ``a.b=value`` overrides.

Unknown keys are errors everywhere, so a typo never silently falls back to a
default.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass, replace
from pathlib import Path

from .datasets import DatasetSpec
from .sampler import SamplerConfig
from .trainer import FinetuneConfig, TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class ModelSection:
    hidden: int = 64
    n_freqs: int = 8
    enc_hidden: int = 32
    embed_dim: int = 8


@dataclass
class DataSection:
    kind: str = "eight_gaussians"
    sigma: float = 0.1
    radius: float = 1.0
    rotation_deg: float = 0.0
    noise: float = 0.05
    path: str | None = None
    n_train: int = 8192


@dataclass
class SamplerSection:
    kind: str = "ancestral"
    nfe: int | None = None
    n_samples: int = 5000


@dataclass
class EvalSection:
    n_heldout: int = 5000
    n_proj: int = 128
    # three component standard deviations of the default mixture
    coverage_radius: float = 0.3
    heatmap_t: float = 0.5
    heatmap_batches: int = 5
    heatmap_batch_size: int = 8
    heatmap_temperature: float = 1.0


@dataclass
class FinetuneSection:
    target: str = "rotated_eight_gaussians"
    sg_steps: int = 6000
    adv_steps: int = 1000
    freeze_mask: str = "none"


@dataclass
class LogSection:
    wall_time: bool = False


def _train_defaults() -> TrainConfig:
    return TrainConfig()


@dataclass
class ExperimentConfig:
    seed: int = 0
    trainer: TrainConfig = field(default_factory=_train_defaults)
    model: ModelSection = field(default_factory=ModelSection)
    data: DataSection = field(default_factory=DataSection)
    sampler: SamplerSection = field(default_factory=SamplerSection)
    eval: EvalSection = field(default_factory=EvalSection)
    finetune: FinetuneSection = field(default_factory=FinetuneSection)
    log: LogSection = field(default_factory=LogSection)

    def train_config(self) -> TrainConfig:
        return replace(self.trainer, seed=self.seed)

    def finetune_config(self) -> FinetuneConfig:
        f = self.finetune
        return FinetuneConfig(f.sg_steps, f.adv_steps, f.freeze_mask, self.seed)

    def dataset(self, seed: int | None = None) -> DatasetSpec:
        d = self.data
        return DatasetSpec(d.kind, d.sigma, d.radius, d.rotation_deg, d.noise,
                           self.seed if seed is None else seed, d.path)

    def sampler_config(self) -> SamplerConfig:
        return SamplerConfig(self.sampler.kind, self.sampler.nfe, self.seed)

    def model_kwargs(self) -> dict:
        return asdict(self.model)

    def to_dict(self) -> dict:
        d = asdict(self)
        del d["trainer"]["seed"]
        return d


# the master seed lives at the top level only
_EXCLUDED = {("trainer", "seed")}


def _coerce(path: str, value, default):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    # optional fields (default None) take numbers, strings or null
    if isinstance(value, bool) or not (value is None or isinstance(value, (int, float, str))):
        raise ConfigError(f"{path}: unsupported value {value!r}")
    return value


def _apply(obj, data: dict, prefix: str = ""):
    if not isinstance(data, dict):
        raise ConfigError(f"{prefix.rstrip('.') or 'config'}: expected an object, got {data!r}")
    names = {f.name for f in fields(obj)}
    updates = {}
    for key, value in data.items():
        path = prefix + key
        if key not in names or (prefix.rstrip("."), key) in _EXCLUDED:
            hint = " (set the top-level seed instead)" if key == "seed" and prefix else ""
            raise ConfigError(f"unknown config key {path!r}{hint}")
        current = getattr(obj, key)
        if is_dataclass(current):
            updates[key] = _apply(current, value, path + ".")
        else:
            updates[key] = _coerce(path, value, current)
    try:
        return replace(obj, **updates)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def from_dict(data: dict) -> ExperimentConfig:
    return _apply(ExperimentConfig(), data)


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return from_dict(data)


def parse_override(text: str) -> tuple[list[str], object]:
    """``"trainer.batch_size=32"`` -> ``(["trainer", "batch_size"], 32)``.

    The value is read as JSON when possible (numbers, booleans, null) and as
    a bare string otherwise.
    """
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    key, raw = text.split("=", 1)
    if not key:
        raise ConfigError(f"override {text!r} has an empty key")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.split("."), value


def with_overrides(cfg: ExperimentConfig, overrides: list[str]) -> ExperimentConfig:
    for text in overrides:
        keys, value = parse_override(text)
        nested: object = value
        for k in reversed(keys):
            nested = {k: nested}
        cfg = _apply(cfg, nested)
    return cfg


def dumps(cfg: ExperimentConfig) -> str:
    return json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n"

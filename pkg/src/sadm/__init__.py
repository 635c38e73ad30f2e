"""Structure-aware diffusion models for low-dimensional data, built on a small numpy autodiff."""

from .config import ExperimentConfig, load_config
from .datasets import DatasetSpec, sample as sample_dataset
from .diffusion import NoiseSchedule
from .estimator import SADM
from .experiments import evaluate, run_ablation
from .sampler import SamplerConfig
from .trainer import FinetuneConfig, TrainConfig, TrainState, finetune, run_training

__all__ = [
    "SADM",
    "DatasetSpec",
    "ExperimentConfig",
    "FinetuneConfig",
    "NoiseSchedule",
    "SamplerConfig",
    "TrainConfig",
    "TrainState",
    "evaluate",
    "finetune",
    "load_config",
    "run_ablation",
    "run_training",
    "sample_dataset",
]

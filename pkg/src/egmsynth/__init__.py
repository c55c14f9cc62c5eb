"""Synthesis, curation and evaluation of multichannel atrial electrograms with
beta-VAEs, plus augmentation scoring on a noninvasive reconstruction task."""

from .exceptions import EgmSynthError
from .generation import AggregatedPosterior, GenerationSpec, curate, fit_aggregated_posterior
from .losses import LossBreakdown, LossWeights, SpectralConfig, total_loss
from .metrics import FidelityReport, active_units, evaluate, lsd, mmd, mmd_signals
from .model import ConvVae, LatentStats, ModelConfig, build_model, load_checkpoint, save_checkpoint
from .signals import DatasetManifest, EgmTensor, RhythmClass, normalize, resample, split
from .surrogate import SimConfig, build_dataset, simulate_record
from .training import BetaSchedule, TrainConfig, TrainReport, beta_at, train

__version__ = "0.1.0"

__all__ = [
    "AggregatedPosterior",
    "BetaSchedule",
    "ConvVae",
    "DatasetManifest",
    "EgmSynthError",
    "EgmTensor",
    "FidelityReport",
    "GenerationSpec",
    "LatentStats",
    "LossBreakdown",
    "LossWeights",
    "ModelConfig",
    "RhythmClass",
    "SimConfig",
    "SpectralConfig",
    "TrainConfig",
    "TrainReport",
    "active_units",
    "beta_at",
    "build_dataset",
    "build_model",
    "curate",
    "evaluate",
    "fit_aggregated_posterior",
    "load_checkpoint",
    "lsd",
    "mmd",
    "mmd_signals",
    "normalize",
    "resample",
    "save_checkpoint",
    "simulate_record",
    "split",
    "total_loss",
    "train",
]

"""Structured run configuration: per-stage sections, JSON file loading with
unknown-key rejection, CLI overrides, and a global seed override through the
EGMSYNTH_SEED environment variable."""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Union

from .exceptions import InvalidConfig

ENV_SEED = "EGMSYNTH_SEED"


@dataclass
class SimSection:
    n_sinus: int = 19
    n_af: int = 33
    n_channels: int = 2048
    duration_s: float = 2.0
    sample_rate_hz: float = 500.0
    cycle_length_ms: float = 800.0
    af_irregularity: float = 0.6
    wavelet_width_ms: float = 6.0
    conduction_spread_ms: float = 80.0
    af_cycle_scale: float = 0.5
    seed: int = 7


@dataclass
class ModelSection:
    latent_dim: int = 50
    input_t: int = 400
    input_n: int = 2048
    conditional: bool = False
    n_classes: int = 2
    encoder_widths: list[int] = field(default_factory=lambda: [16, 32, 64, 128])
    kernel_size: int = 5
    target_hz: float = 200.0
    init_seed: int = 0


@dataclass
class TrainSection:
    lr: float = 0.001
    batch_size: int = 400
    max_epochs: int = 90
    early_stop_patience: int = 10
    scheduler_factor: float = 0.5
    scheduler_patience: int = 5
    seed: int = 0
    split_seed: int = 0
    beta_max: float = 4.0
    warmup_epochs: int = 10
    n_fft: int = 256
    hop: int = 0
    cutoff_normalized: float = 0.40
    spur_threshold: float = 0.01


@dataclass
class GenerateSection:
    mode: str = "S"
    n_generate: int = 200
    n_keep: int = 25
    seed: int = 0
    fit_mode: str = "diagonal"


@dataclass
class MetricsSection:
    n_fft: int = 256
    hop: int = 0
    active_threshold: float = 0.01
    bandwidth: Union[float, str] = "median"


@dataclass
class DownstreamSection:
    n_leads: int = 64
    noise_level: float = 0.0
    fm_seed: int = 0
    k_grid: list[int] = field(default_factory=lambda: [0, 10, 14, 18, 20, 25])
    hidden: int = 32
    kernel: int = 9
    epochs: int = 30
    lr: float = 0.001
    batch_size: int = 16
    seed: int = 0


@dataclass
class RunConfig:
    sim: SimSection = field(default_factory=SimSection)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainSection = field(default_factory=TrainSection)
    generate: GenerateSection = field(default_factory=GenerateSection)
    metrics: MetricsSection = field(default_factory=MetricsSection)
    downstream: DownstreamSection = field(default_factory=DownstreamSection)


_SEED_FIELDS = ("seed", "split_seed", "fm_seed", "init_seed")


def _apply_section(section: Any, values: dict, name: str) -> None:
    known = {f.name: f for f in dataclasses.fields(section)}
    for key, value in values.items():
        if key not in known:
            raise InvalidConfig(f"unknown key {name}.{key!r} in config")
        setattr(section, key, value)


def load_run_config(path: Union[Path, str, None] = None) -> RunConfig:
    """Defaults, optionally overridden by a JSON config file, then by the
    EGMSYNTH_SEED environment variable."""
    config = RunConfig()
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise InvalidConfig(f"cannot load config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise InvalidConfig("config root must be a JSON object")
        for section_name, values in data.items():
            if not hasattr(config, section_name):
                raise InvalidConfig(f"unknown config section {section_name!r}")
            if not isinstance(values, dict):
                raise InvalidConfig(f"section {section_name!r} must be an object")
            _apply_section(getattr(config, section_name), values, section_name)

    env_seed = os.environ.get(ENV_SEED)
    if env_seed is not None:
        try:
            seed = int(env_seed)
        except ValueError as exc:
            raise InvalidConfig(f"{ENV_SEED} must be an integer") from exc
        for section_name in ("sim", "model", "train", "generate", "downstream"):
            section = getattr(config, section_name)
            for field_name in _SEED_FIELDS:
                if hasattr(section, field_name):
                    setattr(section, field_name, seed)
    return config


def resolved_json(config: RunConfig) -> str:
    return json.dumps(dataclasses.asdict(config), sort_keys=True, indent=1)


def dump_resolved(config: RunConfig, out_dir: Union[Path, str]) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.used").write_text(resolved_json(config))

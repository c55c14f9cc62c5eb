"""Desk-scale stand-in generator for in-silico atrial electrogram datasets.

Records are sums of delayed, amplitude-jittered biphasic wavelets (derivative
of a Gaussian) per channel. Sinus mode uses a fixed smooth activation-delay
gradient across channels (a traveling wavefront) and near-periodic beats; AF
mode draws irregular cycle lengths and re-randomizes the activation order on
every beat.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .exceptions import InvalidConfig
from .signals import (
    DatasetManifest,
    EgmTensor,
    RecordEntry,
    RhythmClass,
    save_manifest,
    save_record,
)


@dataclass(frozen=True)
class SimConfig:
    """Parameters of one simulated record."""

    n_channels: int = 2048
    duration_s: float = 2.0
    sample_rate_hz: float = 500.0
    rhythm: RhythmClass = RhythmClass.SINUS
    seed: int = 0
    cycle_length_ms: float = 800.0
    af_irregularity: float = 0.6
    wavelet_width_ms: float = 6.0
    conduction_spread_ms: float = 80.0

    def __post_init__(self) -> None:
        if self.n_channels < 1:
            raise InvalidConfig("n_channels must be >= 1")
        if not (2.0 <= self.duration_s <= 4.0):
            raise InvalidConfig("duration_s must lie in [2, 4]")
        if self.sample_rate_hz <= 0:
            raise InvalidConfig("sample_rate_hz must be positive")
        n_samples = self.duration_s * self.sample_rate_hz
        if abs(n_samples - round(n_samples)) > 1e-9:
            raise InvalidConfig("duration_s * sample_rate_hz must be an integer")
        if self.cycle_length_ms <= 0:
            raise InvalidConfig("cycle_length_ms must be positive")
        if not (0.0 <= self.af_irregularity <= 1.0):
            raise InvalidConfig("af_irregularity must lie in [0, 1]")
        if self.wavelet_width_ms <= 0 or self.conduction_spread_ms < 0:
            raise InvalidConfig("wavelet_width_ms > 0 and conduction_spread_ms >= 0 required")

    @property
    def n_samples(self) -> int:
        return int(round(self.duration_s * self.sample_rate_hz))


def sinus_beat_times(
    rng: np.random.Generator, duration_s: float, cycle_length_s: float, jitter_frac: float = 0.01
) -> np.ndarray:
    """Near-periodic beat onsets covering [0, duration] plus one beat of margin."""
    n_beats = int(math.ceil(duration_s / cycle_length_s)) + 2
    start = rng.uniform(0.0, 0.5) * cycle_length_s - cycle_length_s
    base = start + np.arange(n_beats + 1) * cycle_length_s
    return base + rng.normal(0.0, jitter_frac * cycle_length_s, size=base.shape)


def af_cycle_lengths(
    rng: np.random.Generator, n_beats: int, cycle_length_s: float, irregularity: float
) -> np.ndarray:
    """Clipped-Gaussian cycle lengths whose coefficient of variation scales
    with irregularity; irregularity 0 degenerates to an exactly periodic train."""
    sigma = irregularity * 0.35 * cycle_length_s
    cycles = rng.normal(cycle_length_s, sigma, size=n_beats)
    return np.clip(cycles, 0.4 * cycle_length_s, 1.6 * cycle_length_s)


def af_beat_times(
    rng: np.random.Generator, duration_s: float, cycle_length_s: float, irregularity: float
) -> np.ndarray:
    n_beats = int(math.ceil(duration_s / (0.5 * cycle_length_s))) + 3
    cycles = af_cycle_lengths(rng, n_beats, cycle_length_s, irregularity)
    start = rng.uniform(0.0, 0.5) * cycle_length_s - cycle_length_s
    return start + np.concatenate([[0.0], np.cumsum(cycles)])


def _delay_profile(rng: np.random.Generator, n_channels: int) -> np.ndarray:
    """Smooth activation-delay profile over channel index, normalized to [0, 1]."""
    u = np.linspace(0.0, 1.0, n_channels) if n_channels > 1 else np.zeros(1)
    direction = rng.choice([-1.0, 1.0])
    amp = rng.uniform(0.05, 0.25)
    freq = rng.integers(1, 4)
    phase = rng.uniform(0.0, 1.0)
    profile = direction * u + amp * np.sin(2.0 * np.pi * (freq * u + phase))
    profile -= profile.min()
    peak = profile.max()
    return profile / peak if peak > 0 else profile


def _wavelet(dt_s: np.ndarray, sigma_s: float) -> np.ndarray:
    # derivative-of-Gaussian, peak amplitude 1 at dt = +/- sigma
    u = dt_s / sigma_s
    return -u * np.exp(0.5 - 0.5 * u * u)


def _beat_shape(dt_s: np.ndarray, sigma_s: float, cycle_s: float) -> np.ndarray:
    """Sharp biphasic deflection plus a slow recovery hump.

    The hump keeps the channel-mean spectrum dominated by the beat-rate
    fundamental instead of the deflection's high-frequency peak."""
    hump_lag = 0.18 * cycle_s
    hump_sigma = 0.12 * cycle_s
    hump = 0.35 * np.exp(-0.5 * ((dt_s - hump_lag) / hump_sigma) ** 2)
    return _wavelet(dt_s, sigma_s) + hump


def simulate_record(config: SimConfig) -> EgmTensor:
    """Deterministically synthesize one multichannel electrogram record."""
    rng = np.random.default_rng(config.seed)
    t = np.arange(config.n_samples) / config.sample_rate_hz
    n = config.n_channels
    u = np.linspace(0.0, 1.0, n) if n > 1 else np.zeros(1)
    cl_s = config.cycle_length_ms / 1000.0
    sigma_s = config.wavelet_width_ms / 1000.0
    spread_s = config.conduction_spread_ms / 1000.0

    amp_freq = rng.integers(1, 4)
    amp_phase = rng.uniform(0.0, 1.0)
    channel_amp = 1.0 + 0.25 * np.sin(2.0 * np.pi * (amp_freq * u + amp_phase))

    if config.rhythm is RhythmClass.SINUS:
        beats = sinus_beat_times(rng, config.duration_s, cl_s)
        delays = spread_s * _delay_profile(rng, n)
        beat_jitter = 0.05
    else:
        beats = af_beat_times(rng, config.duration_s, cl_s, config.af_irregularity)
        delays = None
        beat_jitter = 0.15

    values = np.zeros((config.n_samples, n), dtype=np.float64)
    for beat in beats:
        if config.rhythm is RhythmClass.AF:
            delays = spread_s * _delay_profile(rng, n)
        onsets = beat + delays
        amps = channel_amp * (1.0 + beat_jitter * rng.standard_normal(n))
        dt = t[:, None] - onsets[None, :]
        values += amps[None, :] * _beat_shape(dt, sigma_s, cl_s)

    wander_freq = rng.uniform(0.3, 0.7)
    wander_phase = rng.uniform(0.0, 1.0, size=n)
    values += 0.01 * np.sin(2.0 * np.pi * (wander_freq * t[:, None] + wander_phase[None, :]))
    values += 5e-4 * rng.standard_normal(values.shape)

    return EgmTensor(values.astype(np.float32), config.sample_rate_hz, config.rhythm)


def build_dataset(
    n_sinus: int,
    n_af: int,
    base_config: SimConfig,
    seed: int,
    out_dir: Path | str,
    af_cycle_scale: float = 0.5,
) -> DatasetManifest:
    """Simulate and write n_sinus + n_af records plus a manifest into out_dir.

    Record i uses seed + i; per-record cycle lengths are jittered around the
    base config (AF cycles additionally shortened by af_cycle_scale).
    """
    if n_sinus + n_af < 1:
        raise InvalidConfig("need at least one record")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    meta_rng = np.random.default_rng(seed)

    records: list[RecordEntry] = []
    index = 0
    for rhythm, count in ((RhythmClass.SINUS, n_sinus), (RhythmClass.AF, n_af)):
        for i in range(count):
            scale = af_cycle_scale if rhythm is RhythmClass.AF else 1.0
            cycle = base_config.cycle_length_ms * scale * meta_rng.uniform(0.85, 1.15)
            cfg = replace(
                base_config,
                rhythm=rhythm,
                seed=seed + index,
                cycle_length_ms=cycle,
            )
            record = simulate_record(cfg)
            rid = f"{rhythm.value}_{i:03d}"
            file_name = f"{rid}.egm"
            save_record(out_dir / file_name, record)
            records.append(
                RecordEntry(
                    record_id=rid,
                    rhythm=rhythm,
                    file_path=file_name,
                    n_samples=record.n_samples,
                    n_channels=record.n_channels,
                    sample_rate_hz=record.sample_rate_hz,
                )
            )
            index += 1

    manifest = DatasetManifest(records=records, base_dir=out_dir)
    save_manifest(out_dir / "manifest.tsv", manifest)
    return manifest

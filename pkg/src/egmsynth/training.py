"""Optimization loop: Adam, linear KL warmup, reduce-on-plateau scheduling,
early stopping, per-step loss logging and best-epoch checkpointing.

Everything is deterministic given the config seed: batch order comes from one
numpy generator, reparameterization noise from one torch generator, and
validation uses the posterior mean (no sampling), so a reloaded checkpoint
reproduces its validation total.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from .exceptions import EmptySplit, InvalidConfig, NonFiniteLoss, ShapeMismatch
from .losses import LOSS_CSV_HEADER, LossBreakdown, LossWeights, SpectralConfig, total_loss
from .model import ConvVae, save_checkpoint
from .signals import (
    DatasetManifest,
    EgmTensor,
    RecordEntry,
    RhythmClass,
    load_record,
    normalize,
    resample,
)


@dataclass(frozen=True)
class BetaSchedule:
    """KL weight ramped linearly from 0 to beta_max over warmup_epochs."""

    beta_max: float = 4.0
    warmup_epochs: int = 10

    def __post_init__(self) -> None:
        if self.beta_max < 0 or self.warmup_epochs < 1:
            raise InvalidConfig("beta_max >= 0 and warmup_epochs >= 1 required")


def beta_at(schedule: BetaSchedule, epoch: int) -> float:
    """Piecewise-linear KL weight at a (0-based) epoch index."""
    if epoch < 0:
        raise InvalidConfig("epoch must be >= 0")
    return schedule.beta_max * min(epoch / schedule.warmup_epochs, 1.0)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.001
    batch_size: int = 400
    max_epochs: int = 90
    early_stop_patience: int = 10
    scheduler_factor: float = 0.5
    scheduler_patience: int = 5
    seed: int = 0
    improvement_tol: float = 1e-4  # relative decrease that counts as improvement

    def __post_init__(self) -> None:
        if self.lr < 0 or self.batch_size < 1 or self.max_epochs < 1:
            raise InvalidConfig("lr >= 0, batch_size >= 1, max_epochs >= 1 required")
        if not 0 < self.scheduler_factor <= 1:
            raise InvalidConfig("scheduler_factor must lie in (0, 1]")
        if self.early_stop_patience < 1 or self.scheduler_patience < 1:
            raise InvalidConfig("patience values must be >= 1")
        if self.early_stop_patience >= self.max_epochs:
            raise InvalidConfig("early_stop_patience must be < max_epochs")


@dataclass
class TrainReport:
    train_history: list[LossBreakdown] = field(default_factory=list)
    val_history: list[LossBreakdown] = field(default_factory=list)
    betas: list[float] = field(default_factory=list)
    learning_rates: list[float] = field(default_factory=list)
    best_epoch: int = -1
    best_val_total: float = math.inf
    best_beta: float = 0.0
    stopped_early: bool = False
    checkpoint_path: Optional[str] = None

    @property
    def epochs_run(self) -> int:
        return len(self.val_history)


class _Plateau:
    """Reduce-on-plateau with a relative improvement tolerance."""

    def __init__(self, factor: float, patience: int, tol: float):
        self.factor = factor
        self.patience = patience
        self.tol = tol
        self.best = math.inf
        self.bad_epochs = 0

    def step(self, value: float, lr: float) -> float:
        if value < self.best * (1.0 - self.tol):
            self.best = value
            self.bad_epochs = 0
            return lr
        self.bad_epochs += 1
        if self.bad_epochs >= self.patience:
            self.bad_epochs = 0
            return lr * self.factor
        return lr


def prepare_record(
    record: EgmTensor, input_shape: tuple[int, int], target_hz: float
) -> EgmTensor:
    """Resample to the working rate, crop to the model window, then normalize."""
    out = resample(record, target_hz) if record.sample_rate_hz != target_hz else record
    t, n = input_shape
    if out.n_channels != n:
        raise ShapeMismatch(f"record has {out.n_channels} channels, model expects {n}")
    if out.n_samples < t:
        raise ShapeMismatch(f"record has {out.n_samples} samples after resampling, need {t}")
    cropped = EgmTensor(out.values[:t], out.sample_rate_hz, out.rhythm)
    return normalize(cropped)


def load_split_tensors(
    manifest: DatasetManifest,
    split_name: str,
    input_shape: tuple[int, int],
    target_hz: float,
) -> tuple[torch.Tensor, list[RhythmClass]]:
    """Load one split as a (B, T, N) float32 tensor plus rhythm labels."""
    entries: list[RecordEntry] = manifest.split_records(split_name)
    arrays, labels = [], []
    for entry in entries:
        record = load_record(manifest.resolve_path(entry))
        prepared = prepare_record(record, input_shape, target_hz)
        arrays.append(prepared.values)
        labels.append(prepared.rhythm)
    if not arrays:
        return torch.empty(0, *input_shape), []
    return torch.from_numpy(np.stack(arrays)), labels


def _evaluate(
    model: ConvVae,
    x: torch.Tensor,
    labels: list[RhythmClass],
    weights: LossWeights,
    cfg: SpectralConfig,
    batch_size: int,
) -> LossBreakdown:
    """Validation pass decoding the posterior mean; averaged over all samples."""
    sums = dict.fromkeys(("total", "recon", "kl", "corr", "grad", "hf", "noise"), 0.0)
    n = x.shape[0]
    with torch.no_grad():
        for start in range(0, n, batch_size):
            xb = x[start : start + batch_size]
            lb = labels[start : start + batch_size] if model.config.conditional else None
            mean, logvar = model.encode_t(xb, lb)
            x_hat = model.decode_t(mean, lb)
            breakdown = total_loss(xb, x_hat, (mean, logvar), weights, cfg).as_floats()
            for key in sums:
                sums[key] += getattr(breakdown, key) * xb.shape[0]
    return LossBreakdown(**{k: v / n for k, v in sums.items()})


def _mean_breakdown(items: list[LossBreakdown]) -> LossBreakdown:
    n = len(items)
    return LossBreakdown(
        **{
            k: sum(getattr(it, k) for it in items) / n
            for k in ("total", "recon", "kl", "corr", "grad", "hf", "noise")
        }
    )


def train(
    model: ConvVae,
    dataset: DatasetManifest,
    config: TrainConfig,
    schedule: BetaSchedule,
    out_dir: Path | str,
    weights: LossWeights = LossWeights(),
    spectral_cfg: SpectralConfig = SpectralConfig(),
    target_hz: Optional[float] = None,
) -> TrainReport:
    """Fit the VAE on the manifest's train split, validating per epoch.

    Writes train_log.csv (per step), val_log.csv (per epoch), config.used and
    best.ckpt into out_dir; returns the populated TrainReport.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    target_hz = target_hz if target_hz is not None else model.config.sample_rate_hz

    train_x, train_labels = load_split_tensors(
        dataset, "train", model.config.input_shape, target_hz
    )
    val_x, val_labels = load_split_tensors(dataset, "val", model.config.input_shape, target_hz)
    if train_x.shape[0] == 0 or val_x.shape[0] == 0:
        raise EmptySplit("training requires nonempty train and val splits")

    n_train = train_x.shape[0]
    batch_size = min(config.batch_size, n_train)
    shuffle_rng = np.random.default_rng(config.seed)
    noise_gen = torch.Generator().manual_seed(config.seed)
    optimizer = torch.optim.Adam(model.parameters(), lr=config.lr)
    plateau = _Plateau(config.scheduler_factor, config.scheduler_patience, config.improvement_tol)

    report = TrainReport(checkpoint_path=str(out_dir / "best.ckpt"))
    train_rows: list[str] = []
    val_rows: list[str] = []
    lr = config.lr
    early_best = math.inf
    bad_epochs = 0
    step = 0

    resolved = {
        "train": asdict(config),
        "schedule": asdict(schedule),
        "weights": asdict(weights),
        "spectral": asdict(spectral_cfg),
        "model": asdict(model.config),
        "target_hz": target_hz,
    }
    (out_dir / "config.used").write_text(json.dumps(resolved, sort_keys=True, indent=1))

    for epoch in range(config.max_epochs):
        beta = beta_at(schedule, epoch)
        epoch_weights = replace(weights, beta=beta)
        report.betas.append(beta)
        report.learning_rates.append(lr)

        model.train()
        perm = shuffle_rng.permutation(n_train)
        step_breakdowns: list[LossBreakdown] = []
        for start in range(0, n_train, batch_size):
            idx = perm[start : start + batch_size]
            xb = train_x[idx]
            lb = [train_labels[i] for i in idx] if model.config.conditional else None
            mean, logvar = model.encode_t(xb, lb)
            z = model.reparameterize_t(mean, logvar, noise_gen)
            x_hat = model.decode_t(z, lb)
            breakdown = total_loss(xb, x_hat, (mean, logvar), epoch_weights, spectral_cfg)
            if not torch.isfinite(breakdown.total):
                raise NonFiniteLoss(
                    f"non-finite loss at epoch {epoch} step {step}: "
                    f"{breakdown.as_floats()!r}"
                )
            optimizer.zero_grad()
            breakdown.total.backward()
            optimizer.step()
            floats = breakdown.as_floats()
            step_breakdowns.append(floats)
            train_rows.append(floats.csv_row(step, epoch, beta))
            step += 1

        model.eval()
        val_breakdown = _evaluate(model, val_x, val_labels, epoch_weights, spectral_cfg, batch_size)
        if not math.isfinite(val_breakdown.total):
            raise NonFiniteLoss(f"non-finite validation loss at epoch {epoch}")
        report.train_history.append(_mean_breakdown(step_breakdowns))
        report.val_history.append(val_breakdown)
        val_rows.append(val_breakdown.csv_row(step - 1, epoch, beta))

        if val_breakdown.total < report.best_val_total:
            report.best_val_total = val_breakdown.total
            report.best_epoch = epoch
            report.best_beta = beta
            save_checkpoint(out_dir / "best.ckpt", model)

        if val_breakdown.total < early_best * (1.0 - config.improvement_tol):
            early_best = val_breakdown.total
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= config.early_stop_patience:
                report.stopped_early = True

        new_lr = plateau.step(val_breakdown.total, lr)
        if new_lr != lr:
            lr = new_lr
            for group in optimizer.param_groups:
                group["lr"] = lr

        if report.stopped_early:
            break

    (out_dir / "train_log.csv").write_text(LOSS_CSV_HEADER + "\n" + "\n".join(train_rows) + "\n")
    (out_dir / "val_log.csv").write_text(LOSS_CSV_HEADER + "\n" + "\n".join(val_rows) + "\n")
    return report


def validation_total(
    model: ConvVae,
    dataset: DatasetManifest,
    beta: float,
    weights: LossWeights = LossWeights(),
    spectral_cfg: SpectralConfig = SpectralConfig(),
    target_hz: Optional[float] = None,
    batch_size: int = 64,
) -> float:
    """Recompute the validation total at a given beta (checkpoint fidelity)."""
    target_hz = target_hz if target_hz is not None else model.config.sample_rate_hz
    val_x, val_labels = load_split_tensors(dataset, "val", model.config.input_shape, target_hz)
    if val_x.shape[0] == 0:
        raise EmptySplit("no validation records")
    model.eval()
    breakdown = _evaluate(
        model, val_x, val_labels, replace(weights, beta=beta), spectral_cfg, batch_size
    )
    return breakdown.total

"""Generation pipeline: fit the aggregated posterior over encoded training
means, sample latents, decode, and curate by minimum-RMSE filtering into
synthetic datasets (sinus-only or per-class)."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch

from .exceptions import (
    EmptyTrainSet,
    InvalidConfig,
    MissingClass,
    NotConditional,
    ShapeMismatch,
)
from .model import ConvVae
from .signals import (
    DatasetManifest,
    EgmTensor,
    RecordEntry,
    RhythmClass,
    save_manifest,
    save_record,
)

_DECODE_CHUNK = 32


@dataclass(frozen=True)
class AggregatedPosterior:
    """Gaussian fit over encoded training means.

    covariance is a (D,) variance vector in diagonal mode, a (D, D) matrix in
    full mode.
    """

    mean: np.ndarray
    covariance: np.ndarray
    fit_mode: str = "diagonal"

    def __post_init__(self) -> None:
        mean = np.asarray(self.mean, dtype=np.float64).reshape(-1)
        cov = np.asarray(self.covariance, dtype=np.float64)
        if self.fit_mode not in ("diagonal", "full"):
            raise InvalidConfig(f"unknown fit_mode {self.fit_mode!r}")
        if self.fit_mode == "diagonal":
            cov = cov.reshape(-1)
            if cov.shape != mean.shape:
                raise ShapeMismatch("variance vector length must match mean")
            if (cov < -1e-10).any():
                raise InvalidConfig("negative variances")
            cov = np.maximum(cov, 0.0)
        else:
            if cov.shape != (mean.size, mean.size):
                raise ShapeMismatch("covariance must be D x D")
            if not np.allclose(cov, cov.T, atol=1e-12):
                raise InvalidConfig("covariance must be symmetric")
            if np.linalg.eigvalsh(cov).min() < -1e-10:
                raise InvalidConfig("covariance must be PSD (up to tolerance)")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def covariance_matrix(self) -> np.ndarray:
        if self.fit_mode == "diagonal":
            return np.diag(self.covariance)
        return self.covariance


@dataclass
class CurationResult:
    scores: np.ndarray  # min-RMSE per candidate
    selected: list[int]  # indices of the n_keep smallest scores
    n_generated: int
    n_selected: int


@dataclass(frozen=True)
class GenerationSpec:
    mode: str = "S"  # "S" (single-class) or "C" (per-class)
    n_generate: int = 200
    n_keep: int = 25

    def __post_init__(self) -> None:
        if self.mode not in ("S", "C"):
            raise InvalidConfig("mode must be 'S' or 'C'")
        if self.n_generate < 1 or not 1 <= self.n_keep <= self.n_generate:
            raise InvalidConfig("need 1 <= n_keep <= n_generate")


def fit_aggregated_posterior(
    model: ConvVae,
    train_set: Sequence[EgmTensor],
    fit_mode: str = "diagonal",
) -> AggregatedPosterior:
    """Fit N(mean, cov) to the encoder means of the training records.

    Conditional models encode each record with its own rhythm label. Variances
    are population (divide by N) moments.
    """
    if len(train_set) == 0:
        raise EmptyTrainSet("cannot fit a posterior over zero records")
    means = []
    for record in train_set:
        label = record.rhythm if model.config.conditional else None
        means.append(model.encode(record, label).mean)
    mu = np.stack(means)  # (n, D)
    center = mu.mean(axis=0)
    if fit_mode == "diagonal":
        cov = mu.var(axis=0)  # population variance
    else:
        centered = mu - center
        cov = centered.T @ centered / mu.shape[0]
    return AggregatedPosterior(mean=center, covariance=cov, fit_mode=fit_mode)


def sample_latents(posterior: AggregatedPosterior, n: int, seed: int) -> np.ndarray:
    """Draw n latents from the fitted Gaussian, deterministically from seed."""
    rng = np.random.default_rng(seed)
    eps = rng.standard_normal((n, posterior.dim))
    if posterior.fit_mode == "diagonal":
        return posterior.mean + np.sqrt(posterior.covariance) * eps
    eigvals, eigvecs = np.linalg.eigh(posterior.covariance)
    scale = eigvecs * np.sqrt(np.maximum(eigvals, 0.0))
    return posterior.mean + eps @ scale.T


def _decode_batch(
    model: ConvVae, latents: np.ndarray, class_label: Optional[RhythmClass]
) -> list[EgmTensor]:
    rhythm = class_label if class_label is not None else RhythmClass.SINUS
    outputs: list[EgmTensor] = []
    with torch.no_grad():
        for start in range(0, latents.shape[0], _DECODE_CHUNK):
            chunk = torch.from_numpy(latents[start : start + _DECODE_CHUNK].astype(np.float32))
            labels = [class_label] * chunk.shape[0] if class_label is not None else None
            decoded = model.decode_t(chunk, labels).numpy()
            for row in decoded:
                outputs.append(EgmTensor(row, model.config.sample_rate_hz, rhythm))
    return outputs


def sample_and_decode(
    model: ConvVae,
    posterior: AggregatedPosterior,
    n: int,
    class_label: Optional[RhythmClass],
    seed: int,
) -> list[EgmTensor]:
    """Sample n latents from the aggregated posterior and decode them."""
    if n < 1:
        raise InvalidConfig("n must be >= 1")
    if model.config.conditional and class_label is None:
        raise MissingClass("conditional model requires a rhythm class to decode")
    if not model.config.conditional and class_label is not None:
        raise NotConditional("class label supplied to an unconditional model")
    latents = sample_latents(posterior, n, seed)
    return _decode_batch(model, latents, class_label)


def rmse_matrix(candidates: Sequence[EgmTensor], references: Sequence[EgmTensor]) -> np.ndarray:
    """Pairwise RMSE between candidates (rows) and references (columns)."""
    if not candidates or not references:
        raise InvalidConfig("candidates and references must be nonempty")
    shape = candidates[0].values.shape
    for item in list(candidates) + list(references):
        if item.values.shape != shape:
            raise ShapeMismatch("all candidates and references must share one shape")
    cand = np.stack([c.values.astype(np.float64) for c in candidates])
    refs = np.stack([r.values.astype(np.float64) for r in references])
    diffs = cand[:, None] - refs[None, :]  # (C, R, T, N)
    return np.sqrt(np.mean(np.square(diffs), axis=(2, 3)))


def curate(
    candidates: Sequence[EgmTensor], references: Sequence[EgmTensor], n_keep: int
) -> CurationResult:
    """Keep the n_keep candidates with the smallest min-RMSE against references.

    Ties break toward the lower candidate index (stable sort).
    """
    if n_keep < 0 or n_keep > len(candidates):
        raise InvalidConfig("n_keep must lie in [0, len(candidates)]")
    scores = rmse_matrix(candidates, references).min(axis=1)
    order = np.argsort(scores, kind="stable")
    selected = sorted(int(i) for i in order[:n_keep])
    return CurationResult(
        scores=scores,
        selected=selected,
        n_generated=len(candidates),
        n_selected=n_keep,
    )


def _write_curated(
    out_dir: Path,
    prefix: str,
    rhythm: RhythmClass,
    candidates: Sequence[EgmTensor],
    result: CurationResult,
    records: list[RecordEntry],
    report_rows: list[str],
) -> None:
    for rank, idx in enumerate(result.selected):
        rid = f"{prefix}_{rank:03d}"
        file_name = f"{rid}.egm"
        record = candidates[idx]
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
    chosen = set(result.selected)
    for idx, score in enumerate(result.scores):
        report_rows.append(
            f"{idx},{rhythm.value},{score!r},{int(idx in chosen)}"
        )


def build_synthetic_dataset(
    model: ConvVae,
    posterior: AggregatedPosterior,
    spec: GenerationSpec,
    references: Sequence[EgmTensor],
    seed: int,
    out_dir: Path | str,
) -> DatasetManifest:
    """Generate, curate and write a synthetic dataset plus curation report.

    Mode S writes n_keep records of one rhythm; mode C samples one latent
    batch, decodes it once per class, and curates each class against the
    same-class references (n_keep records per class).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records: list[RecordEntry] = []
    report_rows: list[str] = []

    if spec.mode == "S":
        label = RhythmClass.SINUS if model.config.conditional else None
        candidates = sample_and_decode(model, posterior, spec.n_generate, label, seed)
        result = curate(candidates, list(references), spec.n_keep)
        _write_curated(
            out_dir, "synt_s", RhythmClass.SINUS, candidates, result, records, report_rows
        )
    else:
        if not model.config.conditional:
            raise NotConditional("mode C requires a conditional model")
        latents = sample_latents(posterior, spec.n_generate, seed)
        for rhythm in (RhythmClass.SINUS, RhythmClass.AF):
            same_class = [r for r in references if r.rhythm is rhythm]
            if not same_class:
                raise InvalidConfig(f"no {rhythm.value} references supplied for mode C")
            candidates = _decode_batch(model, latents, rhythm)
            result = curate(candidates, same_class, spec.n_keep)
            _write_curated(
                out_dir,
                f"synt_c_{rhythm.value}",
                rhythm,
                candidates,
                result,
                records,
                report_rows,
            )

    manifest = DatasetManifest(records=records, base_dir=out_dir)
    save_manifest(out_dir / "manifest.tsv", manifest)
    (out_dir / "curation_report.csv").write_text(
        "candidate,rhythm,score,selected\n" + "\n".join(report_rows) + "\n"
    )
    return manifest

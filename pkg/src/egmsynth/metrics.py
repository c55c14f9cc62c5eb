"""Intrinsic fidelity metrics: log-spectral distance, MMD, Pearson
correlation, latent KL statistics, active-unit counting and embedding export.

Generated samples are paired with the test reference that minimizes RMSE (the
same matching rule the curation step uses) before any per-sample metric is
computed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
from scipy.spatial.distance import cdist

from .exceptions import EmptySet, LengthMismatch, ShapeMismatch, SignalTooShort
from .generation import rmse_matrix
from .losses import SpectralConfig
from .model import ConvVae, LatentStats
from .signals import EgmTensor, RhythmClass

_POWER_FLOOR = 1e-20


@dataclass
class FidelityReport:
    mse: float
    lsd_mean: float
    lsd_std: float
    corr_mean: float
    corr_std: float
    mmd: float
    kl_mean: float
    kl_std: float
    active_units: int
    latent_dim: int
    mmd_per_class: dict[str, float] = field(default_factory=dict)

    _SCALAR_FIELDS = (
        "mse",
        "lsd_mean",
        "lsd_std",
        "corr_mean",
        "corr_std",
        "mmd",
        "kl_mean",
        "kl_std",
        "active_units",
        "latent_dim",
    )

    def to_csv(self, path: Path | str) -> None:
        rows = ["metric,value"]
        for name in self._SCALAR_FIELDS:
            value = getattr(self, name)
            rows.append(f"{name},{value!r}" if isinstance(value, float) else f"{name},{value}")
        for label in sorted(self.mmd_per_class):
            rows.append(f"mmd_{label},{self.mmd_per_class[label]!r}")
        Path(path).write_text("\n".join(rows) + "\n")

    @classmethod
    def from_csv(cls, path: Path | str) -> "FidelityReport":
        values: dict[str, float] = {}
        per_class: dict[str, float] = {}
        for line in Path(path).read_text().splitlines()[1:]:
            name, raw = line.split(",", 1)
            if name.startswith("mmd_"):
                per_class[name[len("mmd_") :]] = float(raw)
            else:
                values[name] = float(raw)
        return cls(
            mse=values["mse"],
            lsd_mean=values["lsd_mean"],
            lsd_std=values["lsd_std"],
            corr_mean=values["corr_mean"],
            corr_std=values["corr_std"],
            mmd=values["mmd"],
            kl_mean=values["kl_mean"],
            kl_std=values["kl_std"],
            active_units=int(values["active_units"]),
            latent_dim=int(values["latent_dim"]),
            mmd_per_class=per_class,
        )


def _values(x: Union[EgmTensor, np.ndarray]) -> np.ndarray:
    arr = x.values if isinstance(x, EgmTensor) else np.asarray(x)
    if arr.ndim != 2:
        raise ShapeMismatch(f"expected a (T, N) matrix, got shape {arr.shape}")
    return arr.astype(np.float64)


def _stft_power_db(x: np.ndarray, cfg: SpectralConfig) -> np.ndarray:
    """Per-channel log-power spectrogram in dB, shape (N, S, F)."""
    t = x.shape[0]
    if t < cfg.n_fft:
        raise SignalTooShort(f"need T >= n_fft ({cfg.n_fft}), got T = {t}")
    n_frames = (t - cfg.n_fft) // cfg.hop + 1
    k = np.arange(cfg.n_fft)
    win = 0.5 - 0.5 * np.cos(2.0 * np.pi * k / cfg.n_fft)
    frames = np.stack(
        [x[s * cfg.hop : s * cfg.hop + cfg.n_fft, :] for s in range(n_frames)], axis=0
    )  # (S, n_fft, N)
    spec = np.fft.rfft(frames * win[None, :, None], axis=1)  # (S, F, N)
    power = np.abs(spec) ** 2
    return 10.0 * np.log10(power + _POWER_FLOOR).transpose(2, 0, 1)  # (N, S, F)


def lsd(x: Union[EgmTensor, np.ndarray], y: Union[EgmTensor, np.ndarray], cfg: SpectralConfig) -> float:
    """Log-spectral distance in dB: per-frame RMS difference of log-power
    spectra, averaged over frames and channels. Zero iff the spectra match."""
    xv, yv = _values(x), _values(y)
    if xv.shape != yv.shape:
        raise ShapeMismatch(f"signal shapes differ: {xv.shape} vs {yv.shape}")
    px = _stft_power_db(xv, cfg)
    py = _stft_power_db(yv, cfg)
    per_frame = np.sqrt(np.mean((px - py) ** 2, axis=2))  # (N, S)
    return float(per_frame.mean())


def pearson(x: Union[EgmTensor, np.ndarray], y: Union[EgmTensor, np.ndarray]) -> float:
    """Channel-averaged temporal Pearson correlation (constant channels count 0)."""
    xv, yv = _values(x), _values(y)
    if xv.shape != yv.shape:
        raise ShapeMismatch(f"signal shapes differ: {xv.shape} vs {yv.shape}")
    xc = xv - xv.mean(axis=0)
    yc = yv - yv.mean(axis=0)
    num = (xc * yc).sum(axis=0)
    den = np.sqrt((xc**2).sum(axis=0)) * np.sqrt((yc**2).sum(axis=0))
    r = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
    return float(np.clip(r, -1.0, 1.0).mean())


def signal_features(x: Union[EgmTensor, np.ndarray]) -> np.ndarray:
    """Per-channel summary features (mean, std, dominant frequency, spectral
    entropy), concatenated into one vector of length 4 * N."""
    xv = _values(x)
    t = xv.shape[0]
    mean = xv.mean(axis=0)
    std = xv.std(axis=0)
    spec = np.abs(np.fft.rfft(xv, axis=0))
    if spec.shape[0] > 1:
        dom = spec[1:].argmax(axis=0) + 1  # skip DC
        dom_norm = dom / (spec.shape[0] - 1)
    else:
        dom_norm = np.zeros(xv.shape[1])
    power = spec**2
    total = power.sum(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        p = np.where(total > 0, power / np.where(total > 0, total, 1.0), 0.0)
        ent = -np.where(p > 0, p * np.log(p), 0.0).sum(axis=0)
    ent_norm = ent / np.log(spec.shape[0]) if spec.shape[0] > 1 else ent
    return np.concatenate([mean, std, dom_norm, ent_norm])


def mmd(
    set_a: np.ndarray, set_b: np.ndarray, bandwidth: Union[float, str] = "median"
) -> float:
    """Biased (V-statistic) squared MMD with a Gaussian RBF kernel.

    Inputs are (n, d) feature matrices. bandwidth is a positive float or
    "median" for the median heuristic over the pooled pairwise distances.
    Identical multisets give exactly 0; the estimator is nonnegative.
    """
    a = np.atleast_2d(np.asarray(set_a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(set_b, dtype=np.float64))
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise EmptySet("both sample sets must be nonempty")
    if a.shape[1] != b.shape[1]:
        raise ShapeMismatch("feature dimensions differ")
    if bandwidth == "median":
        pooled = np.vstack([a, b])
        dists = cdist(pooled, pooled)
        upper = dists[np.triu_indices(pooled.shape[0], k=1)]
        sigma = float(np.median(upper)) if upper.size else 0.0
        if sigma == 0.0:
            sigma = 1.0
    else:
        sigma = float(bandwidth)
        if sigma <= 0:
            raise ValueError("bandwidth must be positive")
    gamma = 1.0 / (2.0 * sigma**2)
    k_aa = np.exp(-gamma * cdist(a, a, "sqeuclidean"))
    k_bb = np.exp(-gamma * cdist(b, b, "sqeuclidean"))
    k_ab = np.exp(-gamma * cdist(a, b, "sqeuclidean"))
    value = k_aa.mean() + k_bb.mean() - 2.0 * k_ab.mean()
    return max(float(value), 0.0)


def mmd_signals(
    set_a: Sequence[EgmTensor],
    set_b: Sequence[EgmTensor],
    bandwidth: Union[float, str] = "median",
    representation: str = "features",
) -> float:
    """MMD between two sets of records, via summary features or flat samples."""
    if len(set_a) == 0 or len(set_b) == 0:
        raise EmptySet("both signal sets must be nonempty")
    if representation == "features":
        fa = np.stack([signal_features(s) for s in set_a])
        fb = np.stack([signal_features(s) for s in set_b])
    elif representation == "flat":
        fa = np.stack([_values(s).ravel() for s in set_a])
        fb = np.stack([_values(s).ravel() for s in set_b])
    else:
        raise ValueError(f"unknown representation {representation!r}")
    return mmd(fa, fb, bandwidth)


def active_units(latent_stats: Sequence[LatentStats], threshold: float = 1e-2) -> int:
    """Count latent dimensions whose encoded-mean variance exceeds threshold."""
    if len(latent_stats) == 0:
        raise EmptySet("need at least one latent sample")
    means = np.stack([s.mean for s in latent_stats])
    return int((means.var(axis=0) > threshold).sum())


def _kl_per_sample(stats: LatentStats) -> float:
    mu, lv = stats.mean, stats.log_variance
    return float(0.5 * np.sum(mu**2 + np.exp(lv) - 1.0 - lv))


def evaluate(
    model: ConvVae,
    test_set: Sequence[EgmTensor],
    generated_set: Sequence[EgmTensor],
    spectral_cfg: Optional[SpectralConfig] = None,
    active_threshold: float = 1e-2,
    bandwidth: Union[float, str] = "median",
) -> FidelityReport:
    """Full intrinsic-fidelity report of generated records against the test set."""
    if len(test_set) == 0 or len(generated_set) == 0:
        raise EmptySet("test_set and generated_set must be nonempty")
    cfg = spectral_cfg if spectral_cfg is not None else SpectralConfig()

    rmse = rmse_matrix(list(generated_set), list(test_set))
    match = rmse.argmin(axis=1)
    mses, corrs, lsds = [], [], []
    for g_idx, r_idx in enumerate(match):
        gen = generated_set[g_idx]
        ref = test_set[r_idx]
        mses.append(float(np.mean((_values(gen) - _values(ref)) ** 2)))
        corrs.append(pearson(gen, ref))
        lsds.append(lsd(gen, ref, cfg))

    test_stats = [
        model.encode(rec, rec.rhythm if model.config.conditional else None) for rec in test_set
    ]
    kls = [_kl_per_sample(s) for s in test_stats]

    per_class: dict[str, float] = {}
    if model.config.conditional:
        for rhythm in (RhythmClass.SINUS, RhythmClass.AF):
            gen_cls = [g for g in generated_set if g.rhythm is rhythm]
            test_cls = [t for t in test_set if t.rhythm is rhythm]
            if gen_cls and test_cls:
                per_class[rhythm.value] = mmd_signals(gen_cls, test_cls, bandwidth)

    return FidelityReport(
        mse=float(np.mean(mses)),
        lsd_mean=float(np.mean(lsds)),
        lsd_std=float(np.std(lsds)),
        corr_mean=float(np.mean(corrs)),
        corr_std=float(np.std(corrs)),
        mmd=mmd_signals(list(generated_set), list(test_set), bandwidth),
        kl_mean=float(np.mean(kls)),
        kl_std=float(np.std(kls)),
        active_units=active_units(test_stats, active_threshold),
        latent_dim=model.config.latent_dim,
        mmd_per_class=per_class,
    )


def export_embedding(
    latents: Sequence[LatentStats],
    labels: Sequence[RhythmClass],
    path: Path | str,
) -> None:
    """Write latent means + rhythm labels as a CSV for external 2-D embedding."""
    if len(latents) == 0:
        raise EmptySet("nothing to export")
    if len(latents) != len(labels):
        raise LengthMismatch(f"{len(latents)} latents vs {len(labels)} labels")
    dim = latents[0].dim
    header = ",".join([f"z{i}" for i in range(dim)] + ["rhythm"])
    rows = [header]
    for stats, label in zip(latents, labels):
        if stats.dim != dim:
            raise ShapeMismatch("latent dimensions differ across samples")
        rows.append(",".join([repr(float(v)) for v in stats.mean] + [label.value]))
    Path(path).write_text("\n".join(rows) + "\n")

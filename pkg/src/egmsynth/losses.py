"""Six-term training objective: reconstruction, KL, correlation, temporal
gradient, high-frequency matching, and spurious-noise suppression.

All terms are computed in float64 torch so they are differentiable with
respect to the reconstruction and the latent statistics and numerically tight
against brute-force references. Inputs may be EgmTensor, numpy arrays or torch
tensors shaped (T, N) or (batch, T, N); every term reduces to a scalar by
averaging over the batch.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np
import torch

from .exceptions import ShapeMismatch, SignalTooShort
from .model import LatentStats
from .signals import EgmTensor

ArrayLike = Union[EgmTensor, np.ndarray, torch.Tensor]
StatsLike = Union[LatentStats, tuple]

LOSS_CSV_HEADER = "step,epoch,beta,total,recon,kl,corr,grad,hf,noise"

_LOG_FLOOR = 1e-6
_CORR_EPS = 1e-8


@dataclass(frozen=True)
class LossWeights:
    """Fixed mixture weights of the total objective; beta is the KL weight."""

    w_recon: float = 0.35
    w_corr: float = 0.5
    w_grad: float = 0.35
    w_hf: float = 0.25
    w_noise: float = 0.10
    beta: float = 0.0


@dataclass(frozen=True)
class SpectralConfig:
    """STFT settings shared by the spectral losses (and the LSD metric)."""

    n_fft: int = 256
    hop: int = 0  # 0 means n_fft // 4
    cutoff_normalized: float = 0.40
    spur_threshold: float = 0.01

    def __post_init__(self) -> None:
        if self.n_fft < 2:
            raise ValueError("n_fft must be >= 2")
        hop = self.hop if self.hop else self.n_fft // 4
        if not 0 < hop <= self.n_fft:
            raise ValueError("hop must lie in (0, n_fft]")
        if not 0.0 < self.cutoff_normalized < 1.0:
            raise ValueError("cutoff_normalized must lie in (0, 1)")
        if self.spur_threshold <= 0:
            raise ValueError("spur_threshold must be positive")
        object.__setattr__(self, "hop", hop)


@dataclass
class LossBreakdown:
    """Per-term values; tensors while a graph is attached, floats after detach."""

    total: torch.Tensor | float
    recon: torch.Tensor | float
    kl: torch.Tensor | float
    corr: torch.Tensor | float
    grad: torch.Tensor | float
    hf: torch.Tensor | float
    noise: torch.Tensor | float

    def as_floats(self) -> "LossBreakdown":
        return LossBreakdown(
            *(float(getattr(self, f)) for f in ("total", "recon", "kl", "corr", "grad", "hf", "noise"))
        )

    def csv_row(self, step: int, epoch: int, beta: float) -> str:
        vals = self.as_floats()
        fields = [str(step), str(epoch), repr(float(beta))] + [
            repr(getattr(vals, f)) for f in ("total", "recon", "kl", "corr", "grad", "hf", "noise")
        ]
        return ",".join(fields)


def _as_batch(x: ArrayLike) -> torch.Tensor:
    if isinstance(x, EgmTensor):
        x = x.values
    if isinstance(x, np.ndarray):
        t = torch.from_numpy(np.ascontiguousarray(x))
    elif torch.is_tensor(x):
        t = x
    else:
        raise TypeError(f"unsupported signal type {type(x)!r}")
    t = t.to(torch.float64)
    if t.dim() == 2:
        t = t.unsqueeze(0)
    if t.dim() != 3:
        raise ShapeMismatch(f"expected (T, N) or (B, T, N), got {tuple(t.shape)}")
    return t


def _paired(x: ArrayLike, x_hat: ArrayLike) -> tuple[torch.Tensor, torch.Tensor]:
    xt, yt = _as_batch(x), _as_batch(x_hat)
    if xt.shape != yt.shape:
        raise ShapeMismatch(f"signal shapes differ: {tuple(xt.shape)} vs {tuple(yt.shape)}")
    return xt, yt


def _stats_pair(stats: StatsLike) -> tuple[torch.Tensor, torch.Tensor]:
    if isinstance(stats, LatentStats):
        mean, logvar = stats.mean, stats.log_variance
    else:
        mean, logvar = stats
    if isinstance(mean, np.ndarray):
        mean = torch.from_numpy(np.ascontiguousarray(mean))
    if isinstance(logvar, np.ndarray):
        logvar = torch.from_numpy(np.ascontiguousarray(logvar))
    mean = mean.to(torch.float64)
    logvar = logvar.to(torch.float64)
    if mean.dim() == 1:
        mean, logvar = mean.unsqueeze(0), logvar.unsqueeze(0)
    if mean.shape != logvar.shape:
        raise ShapeMismatch("mean and log_variance shapes differ")
    return mean, logvar


def recon_loss(x: ArrayLike, x_hat: ArrayLike) -> torch.Tensor:
    """Mean squared error over all time samples and channels."""
    xt, yt = _paired(x, x_hat)
    return (xt - yt).square().mean()


def kl_loss(stats: StatsLike) -> torch.Tensor:
    """KL(q || N(0, I)) summed over dimensions, averaged over the batch."""
    mean, logvar = _stats_pair(stats)
    per_sample = 0.5 * (mean.square() + logvar.exp() - 1.0 - logvar).sum(dim=1)
    return per_sample.mean()


def corr_loss(x: ArrayLike, x_hat: ArrayLike) -> torch.Tensor:
    """One minus the channel-averaged temporal Pearson correlation.

    The denominator carries a 1e-8 additive stabilizer after the product of
    the two norms, so constant channels contribute correlation 0.
    """
    xt, yt = _paired(x, x_hat)
    xc = xt - xt.mean(dim=1, keepdim=True)
    yc = yt - yt.mean(dim=1, keepdim=True)
    num = (xc * yc).sum(dim=1)
    den = xc.square().sum(dim=1).sqrt() * yc.square().sum(dim=1).sqrt() + _CORR_EPS
    r = num / den
    return (1.0 - r.mean(dim=1)).mean()


def grad_loss(x: ArrayLike, x_hat: ArrayLike) -> torch.Tensor:
    """Mean absolute difference of forward temporal differences."""
    xt, yt = _paired(x, x_hat)
    if xt.shape[1] < 2:
        raise ShapeMismatch("temporal gradient needs at least 2 time samples")
    dx = xt[:, 1:, :] - xt[:, :-1, :]
    dy = yt[:, 1:, :] - yt[:, :-1, :]
    return (dx - dy).abs().mean()


def hann_window(n_fft: int, dtype=torch.float64) -> torch.Tensor:
    k = torch.arange(n_fft, dtype=dtype)
    return 0.5 - 0.5 * torch.cos(2.0 * torch.pi * k / n_fft)


def stft_magnitude(x: torch.Tensor, cfg: SpectralConfig) -> torch.Tensor:
    """Channel-averaged STFT magnitude, shape (batch, freq_bins, frames).

    Hann window of length n_fft, frame starts at multiples of hop, no padding.
    """
    if x.shape[1] < cfg.n_fft:
        raise SignalTooShort(f"need T >= n_fft ({cfg.n_fft}), got T = {x.shape[1]}")
    frames = x.unfold(1, cfg.n_fft, cfg.hop)  # (B, S, N, n_fft)
    win = hann_window(cfg.n_fft, dtype=x.dtype)
    spec = torch.fft.rfft(frames * win, dim=-1)  # (B, S, N, F)
    return spec.abs().mean(dim=2).transpose(1, 2)  # (B, F, S)


def highfreq_mask(cfg: SpectralConfig, dtype=torch.float64) -> torch.Tensor:
    """Binary mask selecting bins with normalized frequency above the cutoff.

    Normalized frequency of bin f is f / (n_fft / 2), i.e. 1.0 at Nyquist.
    """
    n_bins = cfg.n_fft // 2 + 1
    f_norm = torch.arange(n_bins, dtype=dtype) / (cfg.n_fft / 2.0)
    return (f_norm > cfg.cutoff_normalized).to(dtype)


def hf_loss(x: ArrayLike, x_hat: ArrayLike, cfg: SpectralConfig) -> torch.Tensor:
    """High-frequency log-magnitude matching, weighted by the true signal's
    relative high-frequency amplitude."""
    xt, yt = _paired(x, x_hat)
    a_t = stft_magnitude(xt, cfg)
    a_p = stft_magnitude(yt, cfg)
    l_t = (a_t + _LOG_FLOOR).log()
    l_p = (a_p + _LOG_FLOOR).log()
    mask = highfreq_mask(cfg, dtype=xt.dtype).view(1, -1, 1)
    peak = a_t.amax(dim=(1, 2), keepdim=True)
    weight = mask * a_t / (peak + _CORR_EPS)
    per_sample = (weight * (l_p - l_t).abs()).mean(dim=(1, 2))
    return per_sample.mean()


def noise_loss(x: ArrayLike, x_hat: ArrayLike, cfg: SpectralConfig) -> torch.Tensor:
    """Penalty on positive reconstructed log-magnitude in high-frequency bins
    where the true signal's amplitude is negligible."""
    xt, yt = _paired(x, x_hat)
    a_t = stft_magnitude(xt, cfg)
    a_p = stft_magnitude(yt, cfg)
    l_p = (a_p + _LOG_FLOOR).log()
    mask = highfreq_mask(cfg, dtype=xt.dtype).view(1, -1, 1)
    peak = a_t.amax(dim=(1, 2), keepdim=True)
    spur = mask * (a_t < cfg.spur_threshold * peak).to(xt.dtype)
    per_sample = (spur * l_p.clamp_min(0.0)).mean(dim=(1, 2))
    return per_sample.mean()


def total_loss(
    x: ArrayLike,
    x_hat: ArrayLike,
    stats: StatsLike,
    weights: LossWeights,
    cfg: SpectralConfig,
) -> LossBreakdown:
    """Weighted composition of all six terms."""
    recon = recon_loss(x, x_hat)
    kl = kl_loss(stats)
    corr = corr_loss(x, x_hat)
    grad = grad_loss(x, x_hat)
    hf = hf_loss(x, x_hat, cfg)
    noise = noise_loss(x, x_hat, cfg)
    total = (
        weights.w_recon * recon
        + weights.beta * kl
        + weights.w_corr * corr
        + weights.w_grad * grad
        + weights.w_hf * hf
        + weights.w_noise * noise
    )
    return LossBreakdown(total=total, recon=recon, kl=kl, corr=corr, grad=grad, hf=hf, noise=noise)

"""Convolutional encoder-decoder VAE over (time x channels) electrogram tensors.

The encoder stacks (conv 5x5, ReLU, 2x2 average pooling) stages and projects
to mean/log-variance of a Gaussian latent; the decoder mirrors it with
transposed convolutions, each followed by a fixed binomial anti-alias
smoothing, and ends in tanh. Rhythm-class conditioning (when enabled) enters
the encoder as broadcast one-hot input channels and the decoder as a one-hot
suffix on the latent vector.
"""

from __future__ import annotations

import io
import json
import zipfile
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .exceptions import InvalidConfig, MissingClass, NotConditional, ShapeMismatch
from .signals import EgmTensor, RhythmClass

_CLASS_LOGVAR = -50.0  # effectively zero variance for one-hot slots


@dataclass(frozen=True)
class LatentStats:
    """Posterior parameters (mean, log-variance) for one encoded sample."""

    mean: np.ndarray
    log_variance: np.ndarray

    def __post_init__(self) -> None:
        mean = np.asarray(self.mean, dtype=np.float64).reshape(-1)
        logvar = np.asarray(self.log_variance, dtype=np.float64).reshape(-1)
        if mean.shape != logvar.shape:
            raise ShapeMismatch("mean and log_variance lengths differ")
        if not (np.isfinite(mean).all() and np.isfinite(logvar).all()):
            raise ValueError("latent statistics must be finite")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "log_variance", logvar)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


@dataclass(frozen=True)
class ModelConfig:
    latent_dim: int = 50
    input_shape: tuple[int, int] = (400, 2048)
    conditional: bool = False
    n_classes: int = 2
    encoder_widths: tuple[int, ...] = (16, 32, 64, 128)
    decoder_widths: tuple[int, ...] = ()  # empty mirrors the encoder, reversed
    kernel_size: int = 5
    sample_rate_hz: float = 200.0  # rate attached to decoded records

    def __post_init__(self) -> None:
        object.__setattr__(self, "input_shape", tuple(int(d) for d in self.input_shape))
        object.__setattr__(self, "encoder_widths", tuple(int(w) for w in self.encoder_widths))
        decoder = tuple(int(w) for w in self.decoder_widths) or tuple(reversed(self.encoder_widths))
        object.__setattr__(self, "decoder_widths", decoder)
        if self.latent_dim < 1:
            raise InvalidConfig("latent_dim must be >= 1")
        if self.conditional and self.n_classes != 2:
            raise InvalidConfig("conditional models use exactly 2 rhythm classes")
        if len(self.input_shape) != 2 or min(self.input_shape) < 1:
            raise InvalidConfig("input_shape must be a positive (T, N) pair")
        if not self.encoder_widths or not self.decoder_widths:
            raise InvalidConfig("encoder_widths and decoder_widths must be nonempty")
        if min(self.encoder_widths) < 1 or min(self.decoder_widths) < 1:
            raise InvalidConfig("layer widths must be positive")
        if self.kernel_size % 2 != 1:
            raise InvalidConfig("kernel_size must be odd")
        depth = max(len(self.encoder_widths), len(self.decoder_widths))
        t, n = self.input_shape
        if t % (2**depth) or n % (2**depth):
            raise InvalidConfig(
                f"input_shape {self.input_shape} must be divisible by 2^{depth}"
            )
        if self.sample_rate_hz <= 0:
            raise InvalidConfig("sample_rate_hz must be positive")


def _one_hot(label: RhythmClass, dtype=torch.float32) -> torch.Tensor:
    return torch.from_numpy(label.one_hot()).to(dtype)


class ConvVae(nn.Module):
    """VAE over (T, N) tensors; unconditional (VAE-S) or class-conditioned (VAE-C)."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        t, n = config.input_shape
        pad = config.kernel_size // 2

        in_ch = 1 + (config.n_classes if config.conditional else 0)
        enc_layers: list[nn.Module] = []
        ch = in_ch
        for width in config.encoder_widths:
            enc_layers.append(nn.Conv2d(ch, width, config.kernel_size, padding=pad))
            enc_layers.append(nn.ReLU(inplace=True))
            enc_layers.append(nn.AvgPool2d(2))
            ch = width
        self.encoder = nn.Sequential(*enc_layers)
        enc_down = 2 ** len(config.encoder_widths)
        self._enc_flat = config.encoder_widths[-1] * (t // enc_down) * (n // enc_down)
        self.to_stats = nn.Linear(self._enc_flat, 2 * config.latent_dim)

        dec_down = 2 ** len(config.decoder_widths)
        self._dec_shape = (config.decoder_widths[0], t // dec_down, n // dec_down)
        z_in = config.latent_dim + (config.n_classes if config.conditional else 0)
        self.from_latent = nn.Linear(z_in, int(np.prod(self._dec_shape)))
        ups: list[nn.Module] = []
        widths = list(config.decoder_widths) + [1]
        for i in range(len(config.decoder_widths)):
            ups.append(nn.ConvTranspose2d(widths[i], widths[i + 1], 4, stride=2, padding=1))
        self.upsamplers = nn.ModuleList(ups)
        # fixed 3x3 binomial kernel, applied depthwise after every upsampling
        smooth = torch.tensor([[1.0, 2.0, 1.0], [2.0, 4.0, 2.0], [1.0, 2.0, 1.0]]) / 16.0
        self.register_buffer("smooth_kernel", smooth.view(1, 1, 3, 3))

    # ------------------------------------------------------------------ torch

    def _check_labels(self, labels: Optional[Sequence[RhythmClass]], batch: int) -> None:
        if self.config.conditional:
            if labels is None:
                raise MissingClass("conditional model requires a rhythm class")
            if len(labels) != batch:
                raise ShapeMismatch("one class label per batch element required")
        elif labels is not None:
            raise NotConditional("class labels supplied to an unconditional model")

    def _label_planes(self, labels: Sequence[RhythmClass], t: int, n: int) -> torch.Tensor:
        onehots = torch.stack([_one_hot(lab) for lab in labels])  # (B, C)
        return onehots.view(len(labels), -1, 1, 1).expand(-1, -1, t, n)

    def _smooth(self, x: torch.Tensor) -> torch.Tensor:
        ch = x.shape[1]
        kernel = self.smooth_kernel.expand(ch, 1, 3, 3)
        return F.conv2d(x, kernel, padding=1, groups=ch)

    def encode_t(
        self, x: torch.Tensor, labels: Optional[Sequence[RhythmClass]] = None
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """Encode a (B, T, N) float tensor into (mean, log_variance), each (B, D)."""
        if x.dim() != 3 or tuple(x.shape[1:]) != self.config.input_shape:
            raise ShapeMismatch(
                f"expected (B, {self.config.input_shape[0]}, {self.config.input_shape[1]}), "
                f"got {tuple(x.shape)}"
            )
        self._check_labels(labels, x.shape[0])
        h = x.unsqueeze(1)
        if self.config.conditional:
            planes = self._label_planes(labels, *self.config.input_shape).to(h.dtype)
            h = torch.cat([h, planes], dim=1)
        h = self.encoder(h).flatten(1)
        stats = self.to_stats(h)
        return stats.chunk(2, dim=1)

    def condition_t(self, z: torch.Tensor, labels: Sequence[RhythmClass]) -> torch.Tensor:
        if not self.config.conditional:
            raise NotConditional("conditioning requested on an unconditional model")
        onehots = torch.stack([_one_hot(lab) for lab in labels]).to(z.dtype)
        return torch.cat([z, onehots], dim=1)

    def decode_t(
        self, z: torch.Tensor, labels: Optional[Sequence[RhythmClass]] = None
    ) -> torch.Tensor:
        """Decode (B, D) latents into (B, T, N) signals in (-1, 1)."""
        if z.dim() != 2 or z.shape[1] != self.config.latent_dim:
            raise ShapeMismatch(f"expected (B, {self.config.latent_dim}) latents, got {tuple(z.shape)}")
        self._check_labels(labels, z.shape[0])
        if self.config.conditional:
            z = self.condition_t(z, labels)
        h = self.from_latent(z).view(z.shape[0], *self._dec_shape)
        for up in self.upsamplers:
            h = self._smooth(up(h))
            if up is not self.upsamplers[-1]:
                h = F.relu(h, inplace=True)
        return torch.tanh(h).squeeze(1)

    def reparameterize_t(
        self, mean: torch.Tensor, logvar: torch.Tensor, generator: torch.Generator
    ) -> torch.Tensor:
        eps = torch.randn(mean.shape, generator=generator, dtype=mean.dtype)
        return mean + torch.exp(0.5 * logvar) * eps

    # ------------------------------------------------------------------ numpy

    def _as_input(self, signal: Union[EgmTensor, np.ndarray]) -> torch.Tensor:
        values = signal.values if isinstance(signal, EgmTensor) else np.asarray(signal)
        return torch.from_numpy(np.ascontiguousarray(values, dtype=np.float32)).unsqueeze(0)

    def encode(
        self, signal: Union[EgmTensor, np.ndarray], class_label: Optional[RhythmClass] = None
    ) -> LatentStats:
        labels = [class_label] if class_label is not None else None
        with torch.no_grad():
            mean, logvar = self.encode_t(self._as_input(signal), labels)
        return LatentStats(mean[0].numpy(), logvar[0].numpy())

    def decode(
        self, z: np.ndarray, class_label: Optional[RhythmClass] = None
    ) -> EgmTensor:
        z_t = torch.from_numpy(np.asarray(z, dtype=np.float32).reshape(1, -1))
        labels = [class_label] if class_label is not None else None
        with torch.no_grad():
            out = self.decode_t(z_t, labels)
        rhythm = class_label if class_label is not None else RhythmClass.SINUS
        return EgmTensor(out[0].numpy(), self.config.sample_rate_hz, rhythm)

    def condition(
        self, stats_or_z: Union[LatentStats, np.ndarray], class_label: RhythmClass
    ) -> Union[LatentStats, np.ndarray]:
        """Append the one-hot class encoding to a latent vector or LatentStats."""
        if not self.config.conditional:
            raise NotConditional("conditioning requested on an unconditional model")
        onehot = class_label.one_hot().astype(np.float64)
        if isinstance(stats_or_z, LatentStats):
            return LatentStats(
                np.concatenate([stats_or_z.mean, onehot]),
                np.concatenate([stats_or_z.log_variance, np.full(2, _CLASS_LOGVAR)]),
            )
        z = np.asarray(stats_or_z, dtype=np.float64).reshape(-1)
        return np.concatenate([z, onehot])


def reparameterize(stats: LatentStats, noise_seed: int) -> np.ndarray:
    """Draw z = mean + exp(0.5 * log_variance) * eps with eps ~ N(0, I)."""
    rng = np.random.default_rng(noise_seed)
    eps = rng.standard_normal(stats.dim)
    return stats.mean + np.exp(0.5 * stats.log_variance) * eps


def build_model(config: ModelConfig, seed: int = 0) -> ConvVae:
    """Construct a ConvVae with weights initialized deterministically from seed."""
    torch.manual_seed(seed)
    return ConvVae(config)


def save_checkpoint(path: Path | str, model: ConvVae) -> None:
    """Write config + float32 parameter tensors into one reproducible archive."""
    path = Path(path)
    cfg = asdict(model.config)
    state = model.state_dict()
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        info = zipfile.ZipInfo("config.json", date_time=(1980, 1, 1, 0, 0, 0))
        zf.writestr(info, json.dumps(cfg, sort_keys=True, indent=1))
        for name in sorted(state):
            buf = io.BytesIO()
            np.save(buf, state[name].numpy().astype(np.float32, copy=False))
            entry = zipfile.ZipInfo(f"params/{name}.npy", date_time=(1980, 1, 1, 0, 0, 0))
            zf.writestr(entry, buf.getvalue())


def load_checkpoint(path: Path | str) -> ConvVae:
    path = Path(path)
    with zipfile.ZipFile(path, "r") as zf:
        cfg = json.loads(zf.read("config.json"))
        config = ModelConfig(
            latent_dim=cfg["latent_dim"],
            input_shape=tuple(cfg["input_shape"]),
            conditional=cfg["conditional"],
            n_classes=cfg["n_classes"],
            encoder_widths=tuple(cfg["encoder_widths"]),
            decoder_widths=tuple(cfg["decoder_widths"]),
            kernel_size=cfg["kernel_size"],
            sample_rate_hz=cfg["sample_rate_hz"],
        )
        model = ConvVae(config)
        state = {}
        for entry in zf.namelist():
            if entry.startswith("params/") and entry.endswith(".npy"):
                name = entry[len("params/") : -len(".npy")]
                arr = np.load(io.BytesIO(zf.read(entry)))
                state[name] = torch.from_numpy(arr.copy())
        model.load_state_dict(state)
    model.eval()
    return model

"""Core electrogram data types, normalization, resampling, splitting and storage.

Conventions used everywhere else in the package:
- a record is a (time x channels) float32 matrix plus its sample rate and rhythm,
- amplitudes are dimensionless and, after :func:`normalize`, span exactly [-1, 1],
- record files are a one-line ASCII header followed by raw little-endian float32,
- manifests are tab-separated text, one record per line.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Optional

import numpy as np
from scipy import signal as sps

from .exceptions import (
    ConstantSignal,
    IoFailure,
    TooFewRecords,
    UpsampleUnsupported,
)

SPLITS = ("train", "val", "test")
SPLIT_FRACTIONS = {"train": 0.75, "val": 0.15, "test": 0.10}

_RECORD_MAGIC = "EGM1"


class RhythmClass(Enum):
    """Rhythm label of a record; one-hot order is (sinus, af)."""

    SINUS = "sinus"
    AF = "af"

    def one_hot(self) -> np.ndarray:
        vec = np.zeros(2, dtype=np.float32)
        vec[0 if self is RhythmClass.SINUS else 1] = 1.0
        return vec

    @classmethod
    def from_label(cls, label: str) -> "RhythmClass":
        return cls(label.strip().lower())


@dataclass(frozen=True)
class EgmTensor:
    """A multichannel electrogram segment.

    values is (T, N): T time samples by N channels, stored float32.
    """

    values: np.ndarray
    sample_rate_hz: float
    rhythm: RhythmClass

    def __post_init__(self) -> None:
        values = np.ascontiguousarray(self.values, dtype=np.float32)
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
            raise ValueError(f"expected a (T, N) matrix, got shape {values.shape}")
        if not self.sample_rate_hz > 0:
            raise ValueError("sample_rate_hz must be positive")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "sample_rate_hz", float(self.sample_rate_hz))

    @property
    def n_samples(self) -> int:
        return self.values.shape[0]

    @property
    def n_channels(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class RecordEntry:
    record_id: str
    rhythm: RhythmClass
    file_path: str
    n_samples: int
    n_channels: int
    sample_rate_hz: float


@dataclass
class DatasetManifest:
    """Listing of records plus an optional train/val/test assignment.

    base_dir is where relative record paths resolve; it is set on load/save
    and never serialized.
    """

    records: list[RecordEntry]
    split_assignment: dict[str, str] = field(default_factory=dict)
    base_dir: Optional[Path] = None

    def __len__(self) -> int:
        return len(self.records)

    def record_ids(self) -> list[str]:
        return [r.record_id for r in self.records]

    def split_records(self, split: str) -> list[RecordEntry]:
        if split not in SPLITS:
            raise ValueError(f"unknown split {split!r}")
        return [r for r in self.records if self.split_assignment.get(r.record_id) == split]

    def resolve_path(self, entry: RecordEntry) -> Path:
        path = Path(entry.file_path)
        if path.is_absolute() or self.base_dir is None:
            return path
        return self.base_dir / path

    def class_counts(self) -> dict[RhythmClass, int]:
        counts = {RhythmClass.SINUS: 0, RhythmClass.AF: 0}
        for r in self.records:
            counts[r.rhythm] += 1
        return counts


def normalize(signal: EgmTensor) -> EgmTensor:
    """Scale a record onto [-1, 1] using its global min/max.

    The map is 2*(x - min)/(max - min) - 1 over all T*N entries, so both
    endpoints are attained exactly and inter-channel amplitude relationships
    are preserved. Computed in float64 and rounded back to float32, which
    makes the operation exactly idempotent.
    """
    x = signal.values
    gmin = float(x.min())
    gmax = float(x.max())
    if gmax == gmin:
        raise ConstantSignal("global max equals global min; cannot scale to [-1, 1]")
    scaled = 2.0 * (x.astype(np.float64) - gmin) / (gmax - gmin) - 1.0
    return replace(signal, values=scaled.astype(np.float32))


def resample(signal: EgmTensor, target_hz: float) -> EgmTensor:
    """Anti-aliased downsampling to target_hz along the time axis.

    A zero-phase Butterworth low-pass at 0.9x the target Nyquist precedes
    polyphase rate conversion; the output length is round(T * target/source).
    """
    source_hz = signal.sample_rate_hz
    if target_hz > source_hz:
        raise UpsampleUnsupported(
            f"target {target_hz} Hz exceeds record rate {source_hz} Hz"
        )
    if target_hz == source_hz:
        return replace(signal)

    ratio = Fraction(target_hz / source_hz).limit_denominator(10_000)
    up, down = ratio.numerator, ratio.denominator
    t_in = signal.n_samples
    t_out = int(math.floor(t_in * target_hz / source_hz + 0.5))

    cutoff = 0.9 * (target_hz / 2.0)
    sos = sps.butter(8, cutoff, btype="low", fs=source_hz, output="sos")
    padlen = min(t_in - 1, 3 * (2 * sos.shape[0] + 1))
    filtered = sps.sosfiltfilt(sos, signal.values.astype(np.float64), axis=0, padlen=padlen)

    resampled = sps.resample_poly(filtered, up, down, axis=0)
    if resampled.shape[0] < t_out:  # pragma: no cover - ceil(T*up/down) >= round
        pad = np.repeat(resampled[-1:], t_out - resampled.shape[0], axis=0)
        resampled = np.vstack([resampled, pad])
    resampled = resampled[:t_out]
    return EgmTensor(resampled.astype(np.float32), float(target_hz), signal.rhythm)


def _rounded_counts(n: int) -> dict[str, int]:
    # round-half-up for val/test, remainder to train (52 -> 39/8/5, 20 -> 15/3/2)
    n_val = int(math.floor(SPLIT_FRACTIONS["val"] * n + 0.5))
    n_test = int(math.floor(SPLIT_FRACTIONS["test"] * n + 0.5))
    return {"train": n - n_val - n_test, "val": n_val, "test": n_test}


def _largest_remainder(ideal: dict[RhythmClass, float], total: int) -> dict[RhythmClass, int]:
    floors = {c: int(math.floor(v)) for c, v in ideal.items()}
    remainder = total - sum(floors.values())
    by_frac = sorted(ideal, key=lambda c: (-(ideal[c] - floors[c]), c.value))
    for c in by_frac[:remainder]:
        floors[c] += 1
    return floors


def split(manifest: DatasetManifest, seed: int, stratify: bool) -> DatasetManifest:
    """Assign records to train/val/test (0.75/0.15/0.10), optionally stratified.

    Deterministic given seed. With stratify=True, per-class counts follow the
    global split sizes by largest-remainder apportionment, so class
    proportions are preserved up to one record per split.
    """
    n = len(manifest.records)
    if n < 10:
        raise TooFewRecords(f"need at least 10 records to split, got {n}")
    counts = manifest.class_counts()
    present = [c for c in counts if counts[c] > 0]
    if stratify and any(counts[c] < 3 for c in present):
        raise TooFewRecords("stratified split needs at least 3 records per class")

    rng = np.random.default_rng(seed)
    totals = _rounded_counts(n)
    assignment: dict[str, str] = {}

    if stratify and len(present) > 1:
        per_split_class: dict[str, dict[RhythmClass, int]] = {}
        for split_name in ("val", "test"):
            ideal = {c: totals[split_name] * counts[c] / n for c in present}
            per_split_class[split_name] = _largest_remainder(ideal, totals[split_name])
        per_split_class["train"] = {
            c: counts[c]
            - per_split_class["val"][c]
            - per_split_class["test"][c]
            for c in present
        }
        for cls in present:
            ids = sorted(r.record_id for r in manifest.records if r.rhythm is cls)
            order = rng.permutation(len(ids))
            shuffled = [ids[i] for i in order]
            cursor = 0
            for split_name in ("train", "val", "test"):
                take = per_split_class[split_name][cls]
                for rid in shuffled[cursor : cursor + take]:
                    assignment[rid] = split_name
                cursor += take
    else:
        ids = sorted(r.record_id for r in manifest.records)
        order = rng.permutation(len(ids))
        shuffled = [ids[i] for i in order]
        cursor = 0
        for split_name in ("train", "val", "test"):
            take = totals[split_name]
            for rid in shuffled[cursor : cursor + take]:
                assignment[rid] = split_name
            cursor += take

    return DatasetManifest(
        records=list(manifest.records),
        split_assignment=assignment,
        base_dir=manifest.base_dir,
    )


def save_record(path: Path | str, record: EgmTensor) -> None:
    """Write one record: ASCII header then T*N little-endian float32 (row-major)."""
    path = Path(path)
    header = (
        f"{_RECORD_MAGIC} {record.n_samples} {record.n_channels} "
        f"{record.sample_rate_hz!r} {record.rhythm.value}\n"
    )
    try:
        with open(path, "wb") as fh:
            fh.write(header.encode("ascii"))
            fh.write(np.ascontiguousarray(record.values, dtype="<f4").tobytes())
    except OSError as exc:
        raise IoFailure(f"cannot write record {path}: {exc}") from exc


def load_record(path: Path | str) -> EgmTensor:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            header = fh.readline().decode("ascii").split()
            if len(header) != 5 or header[0] != _RECORD_MAGIC:
                raise IoFailure(f"{path}: bad record header")
            t, n = int(header[1]), int(header[2])
            rate = float(header[3])
            rhythm = RhythmClass.from_label(header[4])
            raw = fh.read(4 * t * n)
            if len(raw) != 4 * t * n:
                raise IoFailure(f"{path}: truncated record payload")
            values = np.frombuffer(raw, dtype="<f4").reshape(t, n)
    except OSError as exc:
        raise IoFailure(f"cannot read record {path}: {exc}") from exc
    return EgmTensor(values.copy(), rate, rhythm)


def save_manifest(path: Path | str, manifest: DatasetManifest) -> None:
    """Write the manifest as one tab-separated line per record.

    Columns: record_id, rhythm, file_path, T, N, sample_rate_hz, split
    (a dash when the record is unassigned).
    """
    path = Path(path)
    lines = []
    for r in manifest.records:
        split_name = manifest.split_assignment.get(r.record_id, "-")
        lines.append(
            "\t".join(
                [
                    r.record_id,
                    r.rhythm.value,
                    r.file_path,
                    str(r.n_samples),
                    str(r.n_channels),
                    repr(r.sample_rate_hz),
                    split_name,
                ]
            )
        )
    try:
        path.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="ascii")
    except OSError as exc:
        raise IoFailure(f"cannot write manifest {path}: {exc}") from exc


def load_manifest(path: Path | str) -> DatasetManifest:
    path = Path(path)
    records: list[RecordEntry] = []
    assignment: dict[str, str] = {}
    try:
        text = path.read_text(encoding="ascii")
    except OSError as exc:
        raise IoFailure(f"cannot read manifest {path}: {exc}") from exc
    for line in text.splitlines():
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 7:
            raise IoFailure(f"{path}: malformed manifest line {line!r}")
        rid, rhythm, file_path, t, n, rate, split_name = fields
        records.append(
            RecordEntry(rid, RhythmClass.from_label(rhythm), file_path, int(t), int(n), float(rate))
        )
        if split_name != "-":
            assignment[rid] = split_name
    return DatasetManifest(records=records, split_assignment=assignment, base_dir=path.parent)


def load_split(manifest: DatasetManifest, split_name: str) -> list[EgmTensor]:
    return [load_record(manifest.resolve_path(r)) for r in manifest.split_records(split_name)]


def iter_records(manifest: DatasetManifest) -> Iterable[tuple[RecordEntry, EgmTensor]]:
    for entry in manifest.records:
        yield entry, load_record(manifest.resolve_path(entry))

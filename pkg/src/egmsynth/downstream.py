"""Augmentation-utility harness: project electrograms to body-surface maps
through a linear forward model, train a small reconstruction network under
different augmentation plans, and report correlation/RMSE per plan.

The reconstruction architecture is a declared stand-in held fixed across
plans so only the augmentation varies; the forward model is a seeded random
matrix with spatially smoothed, norm-one rows.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Sequence, Union

import numpy as np
import torch
from torch import nn

from .exceptions import InsufficientSynthetic, InvalidConfig, ShapeMismatch
from .metrics import pearson
from .signals import DatasetManifest, EgmTensor, RecordEntry, RhythmClass
from .training import load_split_tensors


@dataclass(frozen=True)
class BspmTensor:
    """Body-surface potentials, (T time samples x M leads)."""

    values: np.ndarray
    sample_rate_hz: float

    def __post_init__(self) -> None:
        values = np.ascontiguousarray(self.values, dtype=np.float32)
        if values.ndim != 2:
            raise ShapeMismatch(f"expected (T, M), got shape {values.shape}")
        object.__setattr__(self, "values", values)


@dataclass(frozen=True)
class ForwardModel:
    """Linear map from N atrial sites to M body-surface leads, applied per
    time sample, with optional additive Gaussian noise."""

    transfer_matrix: np.ndarray
    noise_level: float = 0.0

    def __post_init__(self) -> None:
        matrix = np.ascontiguousarray(self.transfer_matrix, dtype=np.float64)
        if matrix.ndim != 2 or min(matrix.shape) < 1:
            raise ShapeMismatch("transfer_matrix must be (M, N)")
        if not np.isfinite(matrix).all():
            raise InvalidConfig("transfer_matrix must be finite")
        if self.noise_level < 0:
            raise InvalidConfig("noise_level must be >= 0")
        object.__setattr__(self, "transfer_matrix", matrix)

    @property
    def n_leads(self) -> int:
        return self.transfer_matrix.shape[0]

    @property
    def n_sites(self) -> int:
        return self.transfer_matrix.shape[1]


def make_forward_model(
    n_sites: int,
    n_leads: int = 64,
    seed: int = 0,
    noise_level: float = 0.0,
    smooth_frac: float = 1.0 / 16.0,
) -> ForwardModel:
    """Seeded random transfer matrix whose rows are spatially low-pass mixtures
    of sites, normalized to unit L2 norm."""
    rng = np.random.default_rng(seed)
    rows = rng.standard_normal((n_leads, n_sites))
    sigma = max(smooth_frac * n_sites, 1e-9)
    half = int(np.ceil(3 * sigma))
    offsets = np.arange(-half, half + 1)
    kernel = np.exp(-0.5 * (offsets / sigma) ** 2)
    kernel /= kernel.sum()
    smoothed = np.stack(
        [np.convolve(np.pad(row, half, mode="wrap"), kernel, mode="same")[half:-half] for row in rows]
    )
    norms = np.linalg.norm(smoothed, axis=1, keepdims=True)
    return ForwardModel(smoothed / norms, noise_level)


def project_to_bspm(egm: EgmTensor, fm: ForwardModel, seed: int = 0) -> BspmTensor:
    """Per-time-sample matrix product plus Gaussian noise at fm.noise_level."""
    if egm.n_channels != fm.n_sites:
        raise ShapeMismatch(
            f"record has {egm.n_channels} channels, forward model expects {fm.n_sites}"
        )
    out = egm.values.astype(np.float64) @ fm.transfer_matrix.T
    if fm.noise_level > 0:
        out = out + fm.noise_level * np.random.default_rng(seed).standard_normal(out.shape)
    return BspmTensor(out.astype(np.float32), egm.sample_rate_hz)


def least_squares_reconstruct(bspm: BspmTensor, fm: ForwardModel) -> np.ndarray:
    """Per-time-sample least-squares inverse; sanity bound for the harness."""
    solution, *_ = np.linalg.lstsq(
        fm.transfer_matrix, bspm.values.astype(np.float64).T, rcond=None
    )
    return solution.T


class Scenario(Enum):
    VAES_AT_K = "vae_s_at_k"
    VAEC_AT_KS = "vae_c_at_ks"
    VAEC_AT_KS_KAF = "vae_c_at_ks_kaf"


PAPER_K_GRID = (0, 10, 14, 18, 20, 25)


@dataclass(frozen=True)
class AugmentationPlan:
    """How many synthetic records to add, and from which synthetic set."""

    scenario: Scenario
    k: int = 0
    k_s: int = 0
    k_af: int = 0

    def __post_init__(self) -> None:
        if min(self.k, self.k_s, self.k_af) < 0:
            raise InvalidConfig("augmentation counts must be >= 0")
        if self.scenario is Scenario.VAES_AT_K and (self.k_s or self.k_af):
            raise InvalidConfig("VAE-S@k uses only k")
        if self.scenario is Scenario.VAEC_AT_KS and (self.k or self.k_af):
            raise InvalidConfig("VAE-C@k_S uses only k_s")
        if self.scenario is Scenario.VAEC_AT_KS_KAF and self.k:
            raise InvalidConfig("VAE-C@k_S,k_AF uses k_s and k_af")

    def counts(self) -> tuple[int, int]:
        """(sinus records, af records) requested from the synthetic set."""
        if self.scenario is Scenario.VAES_AT_K:
            return self.k, 0
        if self.scenario is Scenario.VAEC_AT_KS:
            return self.k_s, 0
        return self.k_s, self.k_af


def _take_synthetic(
    synthetic: DatasetManifest, rhythm: RhythmClass, count: int
) -> list[RecordEntry]:
    pool = [r for r in synthetic.records if r.rhythm is rhythm]
    if len(pool) < count:
        raise InsufficientSynthetic(
            f"plan needs {count} {rhythm.value} records, synthetic set has {len(pool)}"
        )
    return pool[:count]


def _absolute(entry: RecordEntry, manifest: DatasetManifest) -> RecordEntry:
    return RecordEntry(
        record_id=entry.record_id,
        rhythm=entry.rhythm,
        file_path=str(manifest.resolve_path(entry)),
        n_samples=entry.n_samples,
        n_channels=entry.n_channels,
        sample_rate_hz=entry.sample_rate_hz,
    )


def build_training_mix(
    real: DatasetManifest,
    synthetic: DatasetManifest,
    plan: AugmentationPlan,
    seed: int,
) -> DatasetManifest:
    """Real training split plus plan-selected synthetic records, interleaved by
    a seeded shuffle; validation/test splits keep only real records."""
    n_sinus, n_af = plan.counts()
    chosen = _take_synthetic(synthetic, RhythmClass.SINUS, n_sinus) + _take_synthetic(
        synthetic, RhythmClass.AF, n_af
    )
    real_ids = set(real.record_ids())
    for entry in chosen:
        if entry.record_id in real_ids:
            raise InvalidConfig(f"synthetic record id {entry.record_id!r} collides with real id")

    train_entries = [_absolute(e, real) for e in real.split_records("train")]
    train_entries += [_absolute(e, synthetic) for e in chosen]
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(train_entries))
    train_entries = [train_entries[i] for i in order]

    others = [
        _absolute(e, real)
        for e in real.records
        if real.split_assignment.get(e.record_id) != "train"
    ]
    assignment = {e.record_id: "train" for e in train_entries}
    for e in others:
        split_name = real.split_assignment.get(e.record_id)
        if split_name:
            assignment[e.record_id] = split_name
    return DatasetManifest(records=train_entries + others, split_assignment=assignment)


def assert_no_leakage(mix: DatasetManifest, synthetic_ids: set[str]) -> None:
    """Record-id disjointness: no synthetic record and no evaluation record in
    the training set's evaluation splits."""
    train_ids = {r.record_id for r in mix.split_records("train")}
    eval_ids = {r.record_id for r in mix.split_records("val")} | {
        r.record_id for r in mix.split_records("test")
    }
    if train_ids & eval_ids:
        raise InvalidConfig(f"train/eval overlap: {sorted(train_ids & eval_ids)[:5]}")
    if eval_ids & synthetic_ids:
        raise InvalidConfig(f"synthetic records leaked into evaluation: {sorted(eval_ids & synthetic_ids)[:5]}")


@dataclass(frozen=True)
class ReconConfig:
    """Stand-in reconstruction network (BSPM -> EGM), fixed across plans."""

    hidden: int = 32
    kernel: int = 9
    epochs: int = 30
    lr: float = 1e-3
    batch_size: int = 16

    def __post_init__(self) -> None:
        if self.hidden < 1 or self.epochs < 1 or self.batch_size < 1 or self.lr <= 0:
            raise InvalidConfig("recon config fields must be positive")
        if self.kernel % 2 != 1:
            raise InvalidConfig("kernel must be odd")


class _ReconNet(nn.Module):
    def __init__(self, n_leads: int, n_sites: int, cfg: ReconConfig):
        super().__init__()
        pad = cfg.kernel // 2
        self.net = nn.Sequential(
            nn.Conv1d(n_leads, cfg.hidden, cfg.kernel, padding=pad),
            nn.ReLU(inplace=True),
            nn.Conv1d(cfg.hidden, cfg.hidden, cfg.kernel, padding=pad),
            nn.ReLU(inplace=True),
            nn.Conv1d(cfg.hidden, n_sites, cfg.kernel, padding=pad),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:  # (B, T, M) -> (B, T, N)
        return self.net(x.transpose(1, 2)).transpose(1, 2)


@dataclass
class PlanResult:
    scenario: Scenario
    k: int
    corr_mean: float
    corr_std: float
    rmse_mean: float
    rmse_std: float
    n_train: int
    per_class: dict[str, tuple[float, float, float, float]] = field(default_factory=dict)


@dataclass
class DownstreamReport:
    results: list[PlanResult] = field(default_factory=list)

    def lookup(self, scenario: Scenario, k: int) -> PlanResult:
        for r in self.results:
            if r.scenario is scenario and r.k == k:
                return r
        raise KeyError((scenario, k))

    def to_csv(self, path: Path | str) -> None:
        ks = sorted({r.k for r in self.results})
        blocks = [Scenario.VAES_AT_K, Scenario.VAEC_AT_KS, Scenario.VAEC_AT_KS_KAF]
        header = ["k"]
        for block in blocks:
            for metric in ("corr_mean", "corr_std", "rmse_mean", "rmse_std"):
                header.append(f"{block.value}_{metric}")
        rows = [",".join(header)]
        for k in ks:
            row = [str(k)]
            for block in blocks:
                result = self.lookup(block, k)
                row += [
                    repr(result.corr_mean),
                    repr(result.corr_std),
                    repr(result.rmse_mean),
                    repr(result.rmse_std),
                ]
            rows.append(",".join(row))
        Path(path).write_text("\n".join(rows) + "\n")

    def per_class_csv(self, path: Path | str) -> None:
        rows = ["scenario,k,rhythm,corr_mean,corr_std,rmse_mean,rmse_std"]
        for r in self.results:
            for rhythm in sorted(r.per_class):
                cm, cs, rm, rs = r.per_class[rhythm]
                rows.append(
                    f"{r.scenario.value},{r.k},{rhythm},{cm!r},{cs!r},{rm!r},{rs!r}"
                )
        Path(path).write_text("\n".join(rows) + "\n")


def _project_set(x: torch.Tensor, fm: ForwardModel, seed: int) -> torch.Tensor:
    outs = []
    for i in range(x.shape[0]):
        egm = EgmTensor(x[i].numpy(), 1.0, RhythmClass.SINUS)
        outs.append(project_to_bspm(egm, fm, seed + i).values)
    return torch.from_numpy(np.stack(outs))


def _train_reconstructor(
    bspm: torch.Tensor, egm: torch.Tensor, fm: ForwardModel, cfg: ReconConfig, seed: int
) -> _ReconNet:
    torch.manual_seed(seed)
    net = _ReconNet(fm.n_leads, fm.n_sites, cfg)
    optimizer = torch.optim.Adam(net.parameters(), lr=cfg.lr)
    rng = np.random.default_rng(seed)
    n = bspm.shape[0]
    batch = min(cfg.batch_size, n)
    loss_fn = nn.MSELoss()
    net.train()
    for _ in range(cfg.epochs):
        perm = rng.permutation(n)
        for start in range(0, n, batch):
            idx = perm[start : start + batch]
            pred = net(bspm[idx])
            loss = loss_fn(pred, egm[idx])
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
    net.eval()
    return net


def _plan_for(scenario: Scenario, k: int) -> AugmentationPlan:
    if scenario is Scenario.VAES_AT_K:
        return AugmentationPlan(scenario, k=k)
    if scenario is Scenario.VAEC_AT_KS:
        return AugmentationPlan(scenario, k_s=k)
    return AugmentationPlan(scenario, k_s=k, k_af=k)


def run_scenarios(
    real: DatasetManifest,
    synt_s: DatasetManifest,
    synt_c: DatasetManifest,
    fm: ForwardModel,
    recon_config: ReconConfig,
    k_grid: Sequence[int] = PAPER_K_GRID,
    seed: int = 0,
    out_dir: Union[Path, str, None] = None,
    input_shape: tuple[int, int] = (400, 2048),
    target_hz: float = 200.0,
) -> DownstreamReport:
    """Train and evaluate the stand-in reconstructor for every scenario and k.

    All runs share the real manifest's test split and the base seed; each
    run's working seed depends only on the augmentation counts, so k = 0 rows
    are identical across scenario blocks.
    """
    test_x, test_labels = load_split_tensors(real, "test", input_shape, target_hz)
    if test_x.shape[0] == 0:
        raise InvalidConfig("real manifest needs a nonempty test split")
    test_bspm = _project_set(test_x, fm, seed)
    synthetic_ids = set(synt_s.record_ids()) | set(synt_c.record_ids())

    report = DownstreamReport()
    for scenario in Scenario:
        source = synt_s if scenario is Scenario.VAES_AT_K else synt_c
        for k in k_grid:
            plan = _plan_for(scenario, k)
            n_sinus, n_af = plan.counts()
            run_seed = seed + 1009 * n_sinus + 2003 * n_af
            mix = build_training_mix(real, source, plan, run_seed)
            assert_no_leakage(mix, synthetic_ids)
            train_x, _ = load_split_tensors(mix, "train", input_shape, target_hz)
            train_bspm = _project_set(train_x, fm, run_seed + 1)
            net = _train_reconstructor(train_bspm, train_x, fm, recon_config, run_seed)

            with torch.no_grad():
                pred = net(test_bspm).numpy()
            corrs, rmses = [], []
            for i in range(pred.shape[0]):
                truth = test_x[i].numpy()
                corrs.append(pearson(pred[i], truth))
                rmses.append(float(np.sqrt(np.mean((pred[i] - truth) ** 2))))
            corrs_arr, rmses_arr = np.array(corrs), np.array(rmses)
            per_class = {}
            for rhythm in (RhythmClass.SINUS, RhythmClass.AF):
                idx = [i for i, lab in enumerate(test_labels) if lab is rhythm]
                if idx:
                    per_class[rhythm.value] = (
                        float(corrs_arr[idx].mean()),
                        float(corrs_arr[idx].std()),
                        float(rmses_arr[idx].mean()),
                        float(rmses_arr[idx].std()),
                    )
            report.results.append(
                PlanResult(
                    scenario=scenario,
                    k=k,
                    corr_mean=float(corrs_arr.mean()),
                    corr_std=float(corrs_arr.std()),
                    rmse_mean=float(rmses_arr.mean()),
                    rmse_std=float(rmses_arr.std()),
                    n_train=train_x.shape[0],
                    per_class=per_class,
                )
            )

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        report.to_csv(out_dir / "downstream_report.csv")
        report.per_class_csv(out_dir / "per_class_report.csv")
    return report

"""Command-line entry point: simulate -> train -> generate -> evaluate ->
downstream -> report, each writing into its own output directory.

Exit codes: 0 success, 1 runtime failure (one-line diagnostic on stderr),
2 usage errors (argparse). Precedence: CLI flag > config file > defaults.
"""

from __future__ import annotations

import argparse
import contextlib
import fcntl
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import downstream as ds
from . import generation, metrics, surrogate, training
from .exceptions import EgmSynthError, InvalidConfig
from .losses import LossWeights, SpectralConfig
from .model import ModelConfig, build_model, load_checkpoint
from .signals import (
    DatasetManifest,
    RhythmClass,
    load_manifest,
    load_record,
    save_manifest,
    split,
)


@contextlib.contextmanager
def _locked_out_dir(out_dir: Path):
    out_dir.mkdir(parents=True, exist_ok=True)
    lock_path = out_dir / ".lock"
    with open(lock_path, "w") as fh:
        try:
            fcntl.flock(fh, fcntl.LOCK_EX | fcntl.LOCK_NB)
        except BlockingIOError as exc:
            raise InvalidConfig(f"output directory {out_dir} is locked by another run") from exc
        yield
        fcntl.flock(fh, fcntl.LOCK_UN)


def _load_config(args: argparse.Namespace) -> cfgmod.RunConfig:
    return cfgmod.load_run_config(getattr(args, "config", None))


def _override(section, **pairs) -> None:
    for key, value in pairs.items():
        if value is not None:
            setattr(section, key, value)


def _ensure_split(manifest: DatasetManifest, seed: int, out_dir: Path) -> DatasetManifest:
    if manifest.split_assignment:
        return manifest
    counts = manifest.class_counts()
    stratify = all(v > 0 for v in counts.values())
    assigned = split(manifest, seed, stratify)
    save_manifest(out_dir / "manifest_split.tsv", assigned)
    return assigned


def _model_config(mcfg: cfgmod.ModelSection) -> ModelConfig:
    return ModelConfig(
        latent_dim=mcfg.latent_dim,
        input_shape=(mcfg.input_t, mcfg.input_n),
        conditional=mcfg.conditional,
        n_classes=mcfg.n_classes,
        encoder_widths=tuple(mcfg.encoder_widths),
        kernel_size=mcfg.kernel_size,
        sample_rate_hz=mcfg.target_hz,
    )


def _spectral_config(n_fft: int, hop: int, cutoff: float = 0.40, spur: float = 0.01) -> SpectralConfig:
    return SpectralConfig(n_fft=n_fft, hop=hop, cutoff_normalized=cutoff, spur_threshold=spur)


def _prepared_split(manifest, split_name, input_shape, target_hz):
    records = []
    for entry in manifest.split_records(split_name):
        record = load_record(manifest.resolve_path(entry))
        records.append(training.prepare_record(record, input_shape, target_hz))
    return records


def _cmd_simulate(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    _override(
        cfg.sim,
        n_sinus=args.sinus,
        n_af=args.af,
        seed=args.seed,
        n_channels=args.channels,
        duration_s=args.duration,
        sample_rate_hz=args.rate,
        cycle_length_ms=args.cycle_length,
        af_irregularity=args.af_irregularity,
    )
    out_dir = Path(args.out)
    with _locked_out_dir(out_dir):
        cfgmod.dump_resolved(cfg, out_dir)
        base = surrogate.SimConfig(
            n_channels=cfg.sim.n_channels,
            duration_s=cfg.sim.duration_s,
            sample_rate_hz=cfg.sim.sample_rate_hz,
            seed=cfg.sim.seed,
            cycle_length_ms=cfg.sim.cycle_length_ms,
            af_irregularity=cfg.sim.af_irregularity,
            wavelet_width_ms=cfg.sim.wavelet_width_ms,
            conduction_spread_ms=cfg.sim.conduction_spread_ms,
        )
        manifest = surrogate.build_dataset(
            cfg.sim.n_sinus,
            cfg.sim.n_af,
            base,
            cfg.sim.seed,
            out_dir,
            af_cycle_scale=cfg.sim.af_cycle_scale,
        )
    print(f"wrote {len(manifest)} records to {out_dir}")
    return 0


def _cmd_train(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    _override(
        cfg.model,
        latent_dim=args.latent,
        conditional=args.conditional,
        input_t=args.input_t,
        input_n=args.input_n,
        target_hz=args.target_hz,
    )
    if args.widths:
        cfg.model.encoder_widths = [int(w) for w in args.widths.split(",")]
    _override(
        cfg.train,
        lr=args.lr,
        batch_size=args.batch,
        max_epochs=args.epochs,
        seed=args.seed,
        n_fft=args.n_fft,
    )
    out_dir = Path(args.out)
    with _locked_out_dir(out_dir):
        manifest = load_manifest(args.data)
        manifest = _ensure_split(manifest, cfg.train.split_seed, out_dir)
        model = build_model(_model_config(cfg.model), seed=cfg.model.init_seed)
        report = training.train(
            model,
            manifest,
            training.TrainConfig(
                lr=cfg.train.lr,
                batch_size=cfg.train.batch_size,
                max_epochs=cfg.train.max_epochs,
                early_stop_patience=cfg.train.early_stop_patience,
                scheduler_factor=cfg.train.scheduler_factor,
                scheduler_patience=cfg.train.scheduler_patience,
                seed=cfg.train.seed,
            ),
            training.BetaSchedule(cfg.train.beta_max, cfg.train.warmup_epochs),
            out_dir,
            weights=LossWeights(),
            spectral_cfg=_spectral_config(
                cfg.train.n_fft, cfg.train.hop, cfg.train.cutoff_normalized, cfg.train.spur_threshold
            ),
            target_hz=cfg.model.target_hz,
        )
    print(
        f"trained {report.epochs_run} epochs, best epoch {report.best_epoch} "
        f"(val total {report.best_val_total:.6f}), checkpoint {report.checkpoint_path}"
    )
    return 0


def _cmd_generate(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    _override(
        cfg.generate,
        mode=args.mode,
        n_generate=args.n,
        n_keep=args.keep,
        seed=args.seed,
    )
    out_dir = Path(args.out)
    with _locked_out_dir(out_dir):
        cfgmod.dump_resolved(cfg, out_dir)
        model = load_checkpoint(args.model)
        manifest = load_manifest(args.data)
        manifest = _ensure_split(manifest, cfg.train.split_seed, out_dir)
        references = _prepared_split(
            manifest, "train", model.config.input_shape, model.config.sample_rate_hz
        )
        posterior = generation.fit_aggregated_posterior(
            model, references, fit_mode=cfg.generate.fit_mode
        )
        spec = generation.GenerationSpec(
            mode=cfg.generate.mode,
            n_generate=cfg.generate.n_generate,
            n_keep=cfg.generate.n_keep,
        )
        synt = generation.build_synthetic_dataset(
            model, posterior, spec, references, cfg.generate.seed, out_dir
        )
    print(f"curated {len(synt)} synthetic records into {out_dir}")
    return 0


def _cmd_evaluate(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    out_dir = Path(args.out)
    with _locked_out_dir(out_dir):
        cfgmod.dump_resolved(cfg, out_dir)
        model = load_checkpoint(args.model)
        manifest = load_manifest(args.data)
        manifest = _ensure_split(manifest, cfg.train.split_seed, out_dir)
        test_set = _prepared_split(
            manifest, "test", model.config.input_shape, model.config.sample_rate_hz
        )
        generated_manifest = load_manifest(args.generated)
        generated = [
            training.prepare_record(
                load_record(generated_manifest.resolve_path(entry)),
                model.config.input_shape,
                model.config.sample_rate_hz,
            )
            for entry in generated_manifest.records
        ]
        report = metrics.evaluate(
            model,
            test_set,
            generated,
            spectral_cfg=_spectral_config(cfg.metrics.n_fft, cfg.metrics.hop),
            active_threshold=cfg.metrics.active_threshold,
            bandwidth=cfg.metrics.bandwidth,
        )
        report.to_csv(out_dir / "fidelity_report.csv")
        latents, labels = [], []
        for record in test_set + generated:
            label = record.rhythm if model.config.conditional else None
            latents.append(model.encode(record, label))
            labels.append(record.rhythm)
        metrics.export_embedding(latents, labels, out_dir / "embedding.csv")
    print(f"fidelity report and embedding written to {out_dir}")
    return 0


def _cmd_downstream(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    _override(cfg.downstream, n_leads=args.leads, noise_level=args.noise, seed=args.seed)
    if args.k_grid:
        cfg.downstream.k_grid = [int(k) for k in args.k_grid.split(",")]
    out_dir = Path(args.out)
    with _locked_out_dir(out_dir):
        cfgmod.dump_resolved(cfg, out_dir)
        real = load_manifest(args.data)
        real = _ensure_split(real, cfg.train.split_seed, out_dir)
        synt_s = load_manifest(args.synt_s)
        synt_c = load_manifest(args.synt_c)
        fm = ds.make_forward_model(
            n_sites=cfg.model.input_n,
            n_leads=cfg.downstream.n_leads,
            seed=cfg.downstream.fm_seed,
            noise_level=cfg.downstream.noise_level,
        )
        ds.run_scenarios(
            real,
            synt_s,
            synt_c,
            fm,
            ds.ReconConfig(
                hidden=cfg.downstream.hidden,
                kernel=cfg.downstream.kernel,
                epochs=cfg.downstream.epochs,
                lr=cfg.downstream.lr,
                batch_size=cfg.downstream.batch_size,
            ),
            k_grid=cfg.downstream.k_grid,
            seed=cfg.downstream.seed,
            out_dir=out_dir,
            input_shape=(cfg.model.input_t, cfg.model.input_n),
            target_hz=cfg.model.target_hz,
        )
    print(f"downstream reports written to {out_dir}")
    return 0


def _cmd_report(args: argparse.Namespace) -> int:
    run_dir = Path(args.run)
    sections = ["# Run summary", ""]
    fidelity_files = sorted(run_dir.rglob("fidelity_report.csv"))
    if fidelity_files:
        sections.append("## Generation fidelity")
        for path in fidelity_files:
            sections.append(f"### {path.parent.name}")
            sections.append("")
            sections.append("| metric | value |")
            sections.append("| --- | --- |")
            for line in path.read_text().splitlines()[1:]:
                name, value = line.split(",", 1)
                sections.append(f"| {name} | {value} |")
            sections.append("")
    downstream_files = sorted(run_dir.rglob("downstream_report.csv"))
    if downstream_files:
        sections.append("## Downstream augmentation (corr / RMSE per scenario)")
        for path in downstream_files:
            lines = path.read_text().splitlines()
            header = lines[0].split(",")
            sections.append(f"### {path.parent.name}")
            sections.append("")
            sections.append("| " + " | ".join(header) + " |")
            sections.append("|" + "---|" * len(header))
            for line in lines[1:]:
                sections.append("| " + " | ".join(line.split(",")) + " |")
            sections.append("")
    if len(sections) == 2:
        raise InvalidConfig(f"no report CSVs found under {run_dir}")
    out_path = Path(args.out) if args.out else run_dir / "summary.md"
    out_path.write_text("\n".join(sections) + "\n")
    print(f"summary written to {out_path}")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="egmsynth",
        description="Synthesize, curate and evaluate multichannel atrial electrograms.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="write a surrogate in-silico dataset")
    p_sim.add_argument("--sinus", type=int, default=None, help="number of sinus records")
    p_sim.add_argument("--af", type=int, default=None, help="number of AF records")
    p_sim.add_argument("--seed", type=int, default=None)
    p_sim.add_argument("--channels", type=int, default=None)
    p_sim.add_argument("--duration", type=float, default=None, help="seconds, in [2, 4]")
    p_sim.add_argument("--rate", type=float, default=None, help="sample rate in Hz")
    p_sim.add_argument("--cycle-length", type=float, default=None, help="mean cycle length (ms)")
    p_sim.add_argument("--af-irregularity", type=float, default=None)
    p_sim.add_argument("--config", default=None)
    p_sim.add_argument("--out", required=True)
    p_sim.set_defaults(func=_cmd_simulate)

    p_train = sub.add_parser("train", help="train a VAE on a dataset manifest")
    p_train.add_argument("--data", required=True, help="dataset manifest path")
    p_train.add_argument("--latent", type=int, default=None)
    p_train.add_argument("--conditional", action="store_const", const=True, default=None)
    p_train.add_argument("--input-t", type=int, default=None, dest="input_t")
    p_train.add_argument("--input-n", type=int, default=None, dest="input_n")
    p_train.add_argument("--target-hz", type=float, default=None, dest="target_hz")
    p_train.add_argument("--widths", default=None, help="comma-separated encoder widths")
    p_train.add_argument("--lr", type=float, default=None)
    p_train.add_argument("--batch", type=int, default=None)
    p_train.add_argument("--epochs", type=int, default=None)
    p_train.add_argument("--seed", type=int, default=None)
    p_train.add_argument("--n-fft", type=int, default=None, dest="n_fft")
    p_train.add_argument("--config", default=None)
    p_train.add_argument("--out", required=True)
    p_train.set_defaults(func=_cmd_train)

    p_gen = sub.add_parser("generate", help="sample, decode and curate synthetic records")
    p_gen.add_argument("--model", required=True, help="checkpoint path")
    p_gen.add_argument("--data", required=True, help="training dataset manifest")
    p_gen.add_argument("--mode", choices=["S", "C"], default=None)
    p_gen.add_argument("--n", type=int, default=None, help="candidates to generate")
    p_gen.add_argument("--keep", type=int, default=None, help="records kept per class")
    p_gen.add_argument("--seed", type=int, default=None)
    p_gen.add_argument("--config", default=None)
    p_gen.add_argument("--out", required=True)
    p_gen.set_defaults(func=_cmd_generate)

    p_eval = sub.add_parser("evaluate", help="intrinsic fidelity metrics + embedding export")
    p_eval.add_argument("--model", required=True)
    p_eval.add_argument("--data", required=True)
    p_eval.add_argument("--generated", required=True, help="synthetic dataset manifest")
    p_eval.add_argument("--config", default=None)
    p_eval.add_argument("--out", required=True)
    p_eval.set_defaults(func=_cmd_evaluate)

    p_down = sub.add_parser("downstream", help="augmentation scenarios on the reconstruction task")
    p_down.add_argument("--data", required=True)
    p_down.add_argument("--synt-s", required=True, dest="synt_s")
    p_down.add_argument("--synt-c", required=True, dest="synt_c")
    p_down.add_argument("--k-grid", default=None, dest="k_grid", help="comma-separated k values")
    p_down.add_argument("--leads", type=int, default=None)
    p_down.add_argument("--noise", type=float, default=None)
    p_down.add_argument("--seed", type=int, default=None)
    p_down.add_argument("--config", default=None)
    p_down.add_argument("--out", required=True)
    p_down.set_defaults(func=_cmd_downstream)

    p_rep = sub.add_parser("report", help="collate run CSVs into one summary document")
    p_rep.add_argument("--run", required=True, help="directory containing run outputs")
    p_rep.add_argument("--out", default=None)
    p_rep.set_defaults(func=_cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv if argv is not None else sys.argv[1:])
    try:
        return args.func(args)
    except EgmSynthError as exc:
        print(f"egmsynth: error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - one-line diagnostic, nonzero exit
        print(f"egmsynth: unexpected error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

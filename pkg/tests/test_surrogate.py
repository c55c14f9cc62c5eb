import numpy as np
import pytest

from egmsynth.exceptions import InvalidConfig
from egmsynth.signals import RhythmClass, load_record, normalize
from egmsynth.surrogate import (
    SimConfig,
    af_cycle_lengths,
    build_dataset,
    simulate_record,
)


def lag_aligned_corr(a, b, max_lag):
    best = -1.0
    for lag in range(-max_lag, max_lag + 1):
        if lag > 0:
            x, y = a[lag:], b[: len(b) - lag]
        elif lag < 0:
            x, y = a[:lag], b[-lag:]
        else:
            x, y = a, b
        xc, yc = x - x.mean(), y - y.mean()
        den = np.sqrt((xc**2).sum() * (yc**2).sum())
        if den > 0:
            best = max(best, float((xc * yc).sum() / den))
    return best


def median_pairwise_corr(values, max_lag, n_pairs=30, seed=0):
    rng = np.random.default_rng(seed)
    cors = []
    for _ in range(n_pairs):
        i, j = rng.choice(values.shape[1], 2, replace=False)
        cors.append(lag_aligned_corr(values[:, i], values[:, j], max_lag))
    return float(np.median(cors))


def toy_config(rhythm, seed, cycle_ms=700.0, **extra):
    defaults = dict(
        n_channels=24,
        duration_s=2.0,
        sample_rate_hz=200.0,
        rhythm=rhythm,
        seed=seed,
        cycle_length_ms=cycle_ms,
        wavelet_width_ms=8.0,
    )
    defaults.update(extra)
    return SimConfig(**defaults)


class TestSimulateRecord:
    def test_paper_envelope_shape(self):
        cfg = SimConfig(n_channels=2048, duration_s=2.0, sample_rate_hz=500.0, seed=1)
        record = simulate_record(cfg)
        assert record.values.shape == (1000, 2048)
        assert record.sample_rate_hz == 500.0

    def test_zero_irregularity_is_periodic(self):
        cycles = af_cycle_lengths(np.random.default_rng(4), 20, 0.4, irregularity=0.0)
        assert np.ptp(cycles) == 0.0
        assert cycles.var() == 0.0

    def test_sinus_dominant_frequency(self):
        cfg = SimConfig(
            n_channels=16,
            duration_s=4.0,
            sample_rate_hz=500.0,
            rhythm=RhythmClass.SINUS,
            seed=11,
            cycle_length_ms=800.0,
        )
        record = simulate_record(cfg)
        mean_sig = record.values.astype(np.float64).mean(axis=1)
        spec = np.abs(np.fft.rfft(mean_sig))
        freqs = np.fft.rfftfreq(mean_sig.shape[0], d=1 / 500.0)
        dominant = freqs[spec[1:].argmax() + 1]
        assert abs(dominant - 1.25) <= freqs[1] + 1e-12

    def test_deterministic(self):
        cfg = toy_config(RhythmClass.AF, seed=5)
        np.testing.assert_array_equal(simulate_record(cfg).values, simulate_record(cfg).values)

    def test_invalid_configs_rejected(self):
        with pytest.raises(InvalidConfig):
            SimConfig(duration_s=1.0)
        with pytest.raises(InvalidConfig):
            SimConfig(duration_s=2.0, sample_rate_hz=500.1)  # non-integer sample count
        with pytest.raises(InvalidConfig):
            SimConfig(af_irregularity=1.5)
        with pytest.raises(InvalidConfig):
            SimConfig(n_channels=0)

    def test_sinus_channels_cohere_af_decorrelates(self):
        sinus = simulate_record(toy_config(RhythmClass.SINUS, seed=2))
        af = simulate_record(toy_config(RhythmClass.AF, seed=3, cycle_ms=350.0, af_irregularity=0.6))
        sinus_med = median_pairwise_corr(sinus.values.astype(np.float64), max_lag=40)
        af_med = median_pairwise_corr(af.values.astype(np.float64), max_lag=40)
        assert sinus_med > 0.7
        assert af_med < sinus_med

    def test_records_normalizable(self):
        for seed, rhythm in ((0, RhythmClass.SINUS), (1, RhythmClass.AF)):
            record = simulate_record(toy_config(rhythm, seed))
            out = normalize(record)
            assert out.values.min() == -1.0 and out.values.max() == 1.0


class TestBuildDataset:
    def test_dataset_a_composition(self, tmp_path):
        cfg = toy_config(RhythmClass.SINUS, seed=0, n_channels=8)
        manifest = build_dataset(19, 0, cfg, seed=7, out_dir=tmp_path)
        assert len(manifest) == 19
        assert all(r.rhythm is RhythmClass.SINUS for r in manifest.records)

    def test_dataset_b_composition(self, tmp_path):
        cfg = toy_config(RhythmClass.SINUS, seed=0, n_channels=8)
        manifest = build_dataset(19, 33, cfg, seed=7, out_dir=tmp_path)
        counts = manifest.class_counts()
        assert counts[RhythmClass.SINUS] == 19 and counts[RhythmClass.AF] == 33

    def test_rerun_is_byte_identical(self, tmp_path):
        cfg = toy_config(RhythmClass.SINUS, seed=0, n_channels=8)
        m1 = build_dataset(1, 0, cfg, seed=3, out_dir=tmp_path / "a")
        m2 = build_dataset(1, 0, cfg, seed=3, out_dir=tmp_path / "b")
        path_a = m1.resolve_path(m1.records[0])
        path_b = m2.resolve_path(m2.records[0])
        assert path_a.read_bytes() == path_b.read_bytes()
        assert (tmp_path / "a" / "manifest.tsv").read_bytes() == (
            tmp_path / "b" / "manifest.tsv"
        ).read_bytes()

    def test_records_loadable_and_labeled(self, tmp_path):
        cfg = toy_config(RhythmClass.SINUS, seed=0, n_channels=8)
        manifest = build_dataset(2, 3, cfg, seed=1, out_dir=tmp_path)
        for entry in manifest.records:
            record = load_record(manifest.resolve_path(entry))
            assert record.rhythm is entry.rhythm
            assert record.values.shape == (entry.n_samples, entry.n_channels)

    def test_empty_dataset_rejected(self, tmp_path):
        with pytest.raises(InvalidConfig):
            build_dataset(0, 0, toy_config(RhythmClass.SINUS, seed=0), 0, tmp_path)

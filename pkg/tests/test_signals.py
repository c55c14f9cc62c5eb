import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from egmsynth.exceptions import ConstantSignal, TooFewRecords, UpsampleUnsupported
from egmsynth.signals import (
    EgmTensor,
    RhythmClass,
    load_manifest,
    load_record,
    normalize,
    resample,
    save_manifest,
    save_record,
    split,
)

from conftest import dummy_manifest, make_egm


class TestNormalize:
    def test_endpoints_forced(self):
        out = normalize(make_egm([[-3.0], [0.0], [3.0]]))
        np.testing.assert_array_equal(out.values, [[-1.0], [0.0], [1.0]])

    def test_unchanged_when_already_spanning(self):
        values = np.array([[-1.0, 0.25], [0.5, 1.0]], dtype=np.float32)
        out = normalize(make_egm(values))
        np.testing.assert_array_equal(out.values, values)

    def test_random_matrix_matches_elementwise_oracle(self, rng):
        x = rng.standard_normal((4, 4)).astype(np.float32)
        out = normalize(make_egm(x)).values
        gmin, gmax = x.min(), x.max()
        oracle = np.empty_like(x, dtype=np.float64)
        for i in range(4):
            for j in range(4):
                oracle[i, j] = 2.0 * (float(x[i, j]) - gmin) / (gmax - gmin) - 1.0
        assert out.min() == -1.0 and out.max() == 1.0
        np.testing.assert_allclose(out, oracle, atol=1e-7)

    def test_constant_signal_rejected(self):
        with pytest.raises(ConstantSignal):
            normalize(make_egm(np.full((5, 3), 2.5)))

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_idempotent_and_in_range(self, seed):
        rng = np.random.default_rng(seed)
        x = make_egm(rng.standard_normal((6, 5)) * rng.uniform(0.1, 50) + rng.uniform(-5, 5))
        once = normalize(x)
        twice = normalize(once)
        assert once.values.min() == -1.0 and once.values.max() == 1.0
        np.testing.assert_array_equal(once.values, twice.values)


class TestResample:
    def test_paper_shape_500_to_200(self, rng):
        x = make_egm(rng.standard_normal((1000, 4)), rate=500.0)
        out = resample(x, 200.0)
        assert out.values.shape == (400, 4)
        assert out.sample_rate_hz == 200.0

    def test_identity_when_rates_match(self, rng):
        x = make_egm(rng.standard_normal((100, 3)), rate=200.0)
        out = resample(x, 200.0)
        np.testing.assert_array_equal(out.values, x.values)

    def test_sinusoid_peak_survives(self):
        t = np.arange(1000) / 500.0
        x = make_egm(np.sin(2 * np.pi * 10.0 * t)[:, None], rate=500.0)
        out = resample(x, 200.0)
        spectrum = np.abs(np.fft.rfft(out.values[:, 0]))
        freqs = np.fft.rfftfreq(out.values.shape[0], d=1 / 200.0)
        peak = freqs[spectrum.argmax()]
        assert abs(peak - 10.0) <= freqs[1]  # within one DFT bin

    def test_channel_count_preserved(self, rng):
        x = make_egm(rng.standard_normal((500, 7)), rate=500.0)
        assert resample(x, 125.0).values.shape[1] == 7

    def test_upsample_rejected(self, rng):
        with pytest.raises(UpsampleUnsupported):
            resample(make_egm(rng.standard_normal((100, 2)), rate=200.0), 500.0)


class TestSplit:
    def test_dataset_b_sizes_and_stratification(self):
        manifest = dummy_manifest(19, 33)
        out = split(manifest, seed=3, stratify=True)
        sizes = {name: len(out.split_records(name)) for name in ("train", "val", "test")}
        assert sizes == {"train": 39, "val": 8, "test": 5}
        for name in sizes:
            records = out.split_records(name)
            n_sinus = sum(r.rhythm is RhythmClass.SINUS for r in records)
            ideal = sizes[name] * 19 / 52
            assert abs(n_sinus - ideal) <= 1.0

    def test_single_class_20_records(self):
        out = split(dummy_manifest(20, 0), seed=0, stratify=False)
        sizes = [len(out.split_records(name)) for name in ("train", "val", "test")]
        assert sizes == [15, 3, 2]

    def test_deterministic(self):
        manifest = dummy_manifest(12, 14)
        a = split(manifest, seed=9, stratify=True)
        b = split(manifest, seed=9, stratify=True)
        assert a.split_assignment == b.split_assignment

    def test_too_few_records(self):
        with pytest.raises(TooFewRecords):
            split(dummy_manifest(5, 4), seed=0, stratify=False)
        with pytest.raises(TooFewRecords):
            split(dummy_manifest(2, 18), seed=0, stratify=True)

    @given(st.integers(3, 40), st.integers(7, 40), st.integers(0, 1000))
    @settings(max_examples=30, deadline=None)
    def test_partition_property(self, n_sinus, n_af, seed):
        manifest = dummy_manifest(n_sinus, n_af)
        out = split(manifest, seed=seed, stratify=True)
        assigned = []
        for name in ("train", "val", "test"):
            assigned += [r.record_id for r in out.split_records(name)]
        assert sorted(assigned) == sorted(out.record_ids())


class TestPersistence:
    def test_record_round_trip_bit_identical(self, tmp_path, rng):
        record = make_egm(rng.standard_normal((40, 6)), rate=500.0, rhythm=RhythmClass.AF)
        first = tmp_path / "a.egm"
        second = tmp_path / "b.egm"
        save_record(first, record)
        save_record(second, load_record(first))
        assert first.read_bytes() == second.read_bytes()

    def test_record_fields_preserved(self, tmp_path, rng):
        record = make_egm(rng.standard_normal((8, 3)), rate=123.5, rhythm=RhythmClass.SINUS)
        save_record(tmp_path / "r.egm", record)
        loaded = load_record(tmp_path / "r.egm")
        assert loaded.sample_rate_hz == 123.5
        assert loaded.rhythm is RhythmClass.SINUS
        np.testing.assert_array_equal(loaded.values, record.values)

    def test_manifest_round_trip_bit_identical(self, tmp_path):
        manifest = split(dummy_manifest(7, 8), seed=1, stratify=True)
        first = tmp_path / "m1.tsv"
        second = tmp_path / "m2.tsv"
        save_manifest(first, manifest)
        save_manifest(second, load_manifest(first))
        assert first.read_bytes() == second.read_bytes()


def test_egm_tensor_validation():
    with pytest.raises(ValueError):
        EgmTensor(np.zeros(5, dtype=np.float32), 200.0, RhythmClass.SINUS)
    with pytest.raises(ValueError):
        EgmTensor(np.zeros((4, 4), dtype=np.float32), -1.0, RhythmClass.SINUS)


def test_one_hot_order():
    np.testing.assert_array_equal(RhythmClass.SINUS.one_hot(), [1.0, 0.0])
    np.testing.assert_array_equal(RhythmClass.AF.one_hot(), [0.0, 1.0])

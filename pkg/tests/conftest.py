import numpy as np
import pytest

from egmsynth.signals import DatasetManifest, EgmTensor, RecordEntry, RhythmClass


def make_egm(values, rate=200.0, rhythm=RhythmClass.SINUS) -> EgmTensor:
    return EgmTensor(np.asarray(values, dtype=np.float32), rate, rhythm)


def random_egm(rng, t=32, n=8, rate=200.0, rhythm=RhythmClass.SINUS) -> EgmTensor:
    return EgmTensor(rng.standard_normal((t, n)).astype(np.float32), rate, rhythm)


def dummy_manifest(n_sinus, n_af, t=64, n=8, rate=200.0) -> DatasetManifest:
    records = []
    for rhythm, count in ((RhythmClass.SINUS, n_sinus), (RhythmClass.AF, n_af)):
        for i in range(count):
            rid = f"{rhythm.value}_{i:03d}"
            records.append(RecordEntry(rid, rhythm, f"{rid}.egm", t, n, rate))
    return DatasetManifest(records=records)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)

import numpy as np
import pytest

from dpanon import corpus as cg
from dpanon import evaluation as ev
from dpanon.dp_core import make_rng
from dpanon.errors import DataError


def spec(base, jitter=0.0, offset=0.0, period=8.0, dim=20):
    return cg.SyntheticSpeakerSpec(base, jitter, (offset,) * dim, tuple(range(10)), period)


def test_fixed_seed_is_bitwise_reproducible():
    specs = cg.random_speakers(3, make_rng(0))
    a = cg.gen_corpus(specs, 4, seed=9)
    b = cg.gen_corpus(specs, 4, seed=9)
    for u, v in zip(a.utterances, b.utterances):
        assert u.pitch.tobytes() == v.pitch.tobytes()
        assert u.features.tobytes() == v.features.tobytes()
        assert u.labels.tobytes() == v.labels.tobytes()
        assert u.split == v.split


def test_counts_lengths_and_voicing():
    c = cg.gen_corpus(cg.random_speakers(4, make_rng(1)), 10, seed=1)
    assert len(c.utterances) == 40
    assert {u.speaker: 0 for u in c.utterances}.keys() == set(c.speakers)
    for name in c.speakers:
        assert sum(u.speaker == name for u in c.utterances) == 10
    for u in c.utterances:
        assert 30 <= u.pitch.size <= 50
        assert u.features.shape == (u.pitch.size, 20)
        voiced = ~np.isin(u.labels, c.params.unvoiced_classes)
        np.testing.assert_array_equal(u.pitch > 0, voiced)
        assert voiced.sum() >= 5


def test_disjoint_base_pitches_are_separable():
    c = cg.gen_corpus([spec(100.0), spec(250.0)], 20, seed=2)
    means = {u.speaker: [] for u in c.utterances}
    for u in c.utterances:
        means[u.speaker].append(u.pitch[u.pitch > 0].mean())
    assert max(means["spk000"]) < min(means["spk001"])


def test_no_planted_signal_means_chance_attack():
    specs = [spec(150.0) for _ in range(5)]
    c = cg.gen_corpus(specs, 60, seed=3)
    data = [ev.LabeledUtterance(u.features, u.speaker, u.split) for u in c.utterances]
    model = ev.train_asi_attack(data, ev.AttackConfig(seed=0))
    assert ev.asi_error(model, [d for d in data if d.split == "test"]) == pytest.approx(80.0, abs=12.0)


def test_manifest_description_is_versioned():
    c = cg.gen_corpus(cg.random_speakers(2, make_rng(0)), 1, seed=0)
    d = c.describe()
    assert d["generator_version"] == cg.GENERATOR_VERSION
    assert d["params"]["feature_dim"] == 20
    assert set(d["speakers"]) == {"spk000", "spk001"}


def test_generator_validation():
    with pytest.raises(DataError):
        cg.gen_corpus([spec(100.0)], 3)
    with pytest.raises(DataError):
        cg.gen_corpus([spec(100.0), spec(120.0, dim=5)], 3)
    with pytest.raises(DataError):
        spec(500.0)
    with pytest.raises(DataError):
        cg.gen_corpus([spec(100.0), spec(120.0)], 3, length_range=(5, 8))

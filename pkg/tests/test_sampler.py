from collections import Counter
from types import SimpleNamespace

import numpy as np
import pytest

from src.errors import ManifestError, SamplerStateError
from src.training.sampler import DomainAwareSampler, Minibatch, partition_dataset, sample_minibatch


def record(record_id, modality, task, rank="2D"):
    return SimpleNamespace(id=record_id, modality=modality, task=task, rank=rank)


@pytest.fixture
def groups():
    records = [record(f"x-cap-{i}", "xray", "captioning") for i in range(5)]
    records += [record(f"x-det-{i}", "xray", "detection") for i in range(3)]
    records += [record(f"ct-seg-{i}", "ct", "segmentation", "3D") for i in range(4)]
    return partition_dataset(records)


def test_partition_groups(groups):
    assert set(groups) == {("xray", "captioning"), ("xray", "detection"), ("ct", "segmentation")}
    assert len(groups[("xray", "captioning")]) == 5


@pytest.mark.parametrize("bad", [
    [record("a", "xray", "captioning"), record("a", "xray", "captioning")],
    [record("a", "pet", "captioning")],
    [record("a", "xray", "dancing")],
    [record("a", "ct", "segmentation", "2D"), record("b", "ct", "segmentation", "3D")],
])
def test_partition_errors(bad):
    with pytest.raises(ManifestError):
        partition_dataset(bad)


def test_minibatches_are_homogeneous(groups, rng):
    sampler = DomainAwareSampler(groups, batch_size=4)
    for _ in range(200):
        batch = sampler.sample(rng)
        modality, task = batch.key
        prefix = {"captioning": "x-cap", "detection": "x-det", "segmentation": "ct-seg"}[task]
        assert all(i.startswith(prefix) for i in batch.sample_ids)
        assert len(batch) == 4
        assert modality == ("ct" if task == "segmentation" else "xray")


def test_two_stage_frequency_law(groups):
    rng = np.random.default_rng(0)
    sampler = DomainAwareSampler(groups, batch_size=1)
    draws = 20_000
    counts = Counter(sampler.draw_key(rng) for _ in range(draws))
    assert counts[("ct", "segmentation")] / draws == pytest.approx(0.5, abs=0.02)
    assert counts[("xray", "captioning")] / draws == pytest.approx(0.25, abs=0.02)
    assert counts[("xray", "detection")] / draws == pytest.approx(0.25, abs=0.02)


def test_weighted_modalities(groups):
    rng = np.random.default_rng(1)
    sampler = DomainAwareSampler(groups, batch_size=1, modality_weights={"xray": 3.0, "ct": 1.0})
    draws = 20_000
    counts = Counter(sampler.draw_key(rng)[0] for _ in range(draws))
    assert counts["xray"] / draws == pytest.approx(0.75, abs=0.02)


def test_small_group_samples_with_replacement(groups, rng):
    batch = sample_minibatch({("xray", "detection"): groups[("xray", "detection")]}, 8, rng)
    assert len(batch) == 8


def test_sampler_errors(groups):
    with pytest.raises(SamplerStateError):
        DomainAwareSampler({}, batch_size=2)
    with pytest.raises(SamplerStateError):
        DomainAwareSampler(groups, batch_size=2, modality_weights={"xray": 0.0, "ct": 0.0})


def test_minibatch_rejects_foreign_sample():
    foreign = SimpleNamespace(modality="ct", task="captioning", sample_id="s")
    with pytest.raises(SamplerStateError):
        Minibatch(key=("xray", "captioning"), sample_ids=["s"], samples=[foreign])

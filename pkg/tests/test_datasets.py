"""Split rules: disjointness, determinism, grouped balance, pool sampling."""

from __future__ import annotations

import pytest

from renuance.datasets import (
    generate_pseudo_dimensional_labels,
    sample_msp,
    split_esd,
    split_iemocap,
    write_split_result,
)
from renuance.encoders import EmotionEncoderHandle
from renuance.manifest import ManifestError, load_manifest

from conftest import make_records, manifest_of


def _ids(manifest):
    return {r.utt_id for r in manifest}


def make_parallel_records(n_groups: int):
    """ESD-style fixture: each parallel text spoken once per emotion."""
    records = make_records(4 * n_groups, dataset="ESD")
    from dataclasses import replace

    return [replace(r, group_key=f"t{i // 4}") for i, r in enumerate(records)]


def test_split_iemocap_session5_goes_to_test():
    records = make_records(10, dataset="IEM", group_keys=["1", "2", "3", "4", "5"])
    result = split_iemocap(manifest_of(records))
    assert len(result.test) == 2
    assert len(result.train) == 8
    assert all(r.group_key == "5" for r in result.test)
    assert not (_ids(result.train) & _ids(result.test))


def test_split_iemocap_all_session5_warns():
    records = make_records(4, dataset="IEM", group_keys=["5"])
    with pytest.warns(UserWarning, match="empty side"):
        result = split_iemocap(manifest_of(records))
    assert len(result.train) == 0
    assert len(result.test) == 4


def test_split_iemocap_unknown_session_rejected():
    records = make_records(3, dataset="synthetic", group_keys=["9"])
    with pytest.raises(ManifestError, match="unknown session"):
        split_iemocap(manifest_of(records))


def test_split_esd_350_groups_means_245_105():
    # 350 parallel texts, one record per emotion per group
    records = make_parallel_records(350)
    result = split_esd(manifest_of(records), train_ratio=0.7, seed=3)
    train_groups = {r.group_key for r in result.train}
    test_groups = {r.group_key for r in result.test}
    assert len(train_groups) == 245
    assert len(test_groups) == 105
    assert not (train_groups & test_groups)


def test_split_esd_balanced_per_emotion():
    records = make_parallel_records(350)
    result = split_esd(manifest_of(records), train_ratio=0.7, seed=1)
    from collections import Counter

    train_counts = Counter(r.emotion_cat for r in result.train)
    for emotion, count in train_counts.items():
        assert abs(count - 0.7 * 350) <= 1, f"{emotion} unbalanced: {count}"


def test_split_esd_deterministic_per_seed():
    records = make_parallel_records(10)
    manifest = manifest_of(records)
    a = split_esd(manifest, 0.7, seed=5)
    b = split_esd(manifest, 0.7, seed=5)
    assert _ids(a.train) == _ids(b.train)
    assert _ids(a.test) == _ids(b.test)
    assert len({r.group_key for r in a.train}) == 7
    assert not ({r.group_key for r in a.train} & {r.group_key for r in a.test})


def test_split_esd_too_few_groups():
    records = make_records(4, dataset="ESD", group_keys=["only"])
    with pytest.raises(ManifestError, match="at least 2"):
        split_esd(manifest_of(records), 0.7, seed=0)


def test_sample_msp_sizes_and_determinism():
    records = make_records(9000, dataset="MSP-P", orig_split=["train", "train", "train", "test"])
    manifest = manifest_of(records)
    a = sample_msp(manifest, n_train=4290, n_test=1245, seed=11)
    b = sample_msp(manifest, n_train=4290, n_test=1245, seed=11)
    assert len(a.train) == 4290
    assert len(a.test) == 1245
    assert _ids(a.train) == _ids(b.train)
    assert _ids(a.test) == _ids(b.test)
    assert all(r.orig_split == "train" for r in a.train)
    assert all(r.orig_split == "test" for r in a.test)


def test_sample_msp_pool_too_small_reports_counts():
    records = make_records(10, dataset="MSP-P", orig_split=["train", "test"])
    with pytest.raises(ManifestError, match="need 4290, have 5"):
        sample_msp(manifest_of(records), seed=0)


def test_sample_msp_zero_train_is_valid():
    records = make_records(12, dataset="MSP-P", orig_split=["train", "test"])
    result = sample_msp(manifest_of(records), n_train=0, n_test=3, seed=0)
    assert len(result.train) == 0
    assert len(result.test) == 3


def test_pseudo_labels_fill_missing_and_respect_gold(corpus_dir):
    manifest = load_manifest(corpus_dir / "manifest.jsonl")
    handle = EmotionEncoderHandle.from_seed(7, emb_dim=6, n_mels=8, win_length=128, hop_length=64)
    # half the records have gold vad removed
    from dataclasses import replace

    records = [
        replace(r, vad=None, vad_source="absent") if i % 2 == 0 else r
        for i, r in enumerate(manifest.records)
    ]
    stripped = manifest_of(records)
    stripped.root = manifest.root
    with pytest.warns(UserWarning, match="gold") as caught:
        labeled = generate_pseudo_dimensional_labels(stripped, handle)
    assert len(caught) == len(records) // 2
    for record in labeled:
        assert record.vad is not None
        assert all(0.0 <= v <= 1.0 for v in record.vad)
    gold = [r for r in labeled if r.vad_source == "gold"]
    assert len(gold) == len(records) // 2


def test_pseudo_labels_idempotent_and_deterministic(corpus_dir):
    manifest = load_manifest(corpus_dir / "manifest.jsonl")
    from dataclasses import replace

    stripped = manifest_of([replace(r, vad=None, vad_source="absent") for r in manifest.records])
    stripped.root = manifest.root
    handle = EmotionEncoderHandle.from_seed(7, emb_dim=6, n_mels=8, win_length=128, hop_length=64)
    once = generate_pseudo_dimensional_labels(stripped, handle)
    twice = generate_pseudo_dimensional_labels(once, handle)
    assert [r.vad for r in once] == [r.vad for r in twice]
    again = generate_pseudo_dimensional_labels(stripped, handle)
    assert [r.vad for r in once] == [r.vad for r in again]


def test_write_split_result_sidecar(tmp_path):
    records = make_records(10, dataset="IEM", group_keys=["1", "2", "3", "4", "5"])
    result = split_iemocap(manifest_of(records))
    sidecar = write_split_result(tmp_path / "split", result)
    assert sidecar["counts"] == {"train": 8, "test": 2}
    reloaded = load_manifest(tmp_path / "split" / "train.jsonl")
    assert len(reloaded) == 8
    import json

    info = json.loads((tmp_path / "split" / "split_info.json").read_text())
    assert info["rule"] == "iemocap_session5"

"""Manifest schema, JSONL round trips, and validation errors."""

from __future__ import annotations

import json

import pytest

from renuance.manifest import (
    AudioRef,
    DatasetManifest,
    ManifestError,
    UtteranceRecord,
    load_manifest,
    normalize_vad_scale,
    write_manifest,
)

from conftest import make_records, manifest_of


def test_load_manifest_preserves_order(tmp_path):
    path = tmp_path / "m.jsonl"
    records = make_records(2)
    write_manifest(path, manifest_of(records))
    loaded = load_manifest(path)
    assert [r.utt_id for r in loaded] == [r.utt_id for r in records]
    assert loaded.root == tmp_path


def test_empty_manifest_rejected(tmp_path):
    path = tmp_path / "empty.jsonl"
    path.write_text("", encoding="utf-8")
    with pytest.raises(ManifestError, match="empty manifest"):
        load_manifest(path)


def test_vad_out_of_range_names_utt_id(tmp_path):
    path = tmp_path / "bad.jsonl"
    row = make_records(1)[0].to_json()
    row["vad"] = [1.2, 0.0, 0.0]
    row["vad_source"] = "gold"
    path.write_text(json.dumps(row) + "\n", encoding="utf-8")
    with pytest.raises(ManifestError, match="synthetic-00000.*outside"):
        load_manifest(path)


def test_malformed_line_reports_line_number(tmp_path):
    path = tmp_path / "bad.jsonl"
    good = json.dumps(make_records(1)[0].to_json())
    path.write_text(good + "\n{not json\n", encoding="utf-8")
    with pytest.raises(ManifestError, match=":2:"):
        load_manifest(path)


def test_duplicate_utt_id_rejected(tmp_path):
    path = tmp_path / "dup.jsonl"
    row = json.dumps(make_records(1)[0].to_json())
    path.write_text(row + "\n" + row + "\n", encoding="utf-8")
    with pytest.raises(ManifestError, match="duplicate utt_id"):
        load_manifest(path)


def test_iemocap_session_invariant():
    with pytest.raises(ManifestError, match="session"):
        UtteranceRecord(
            utt_id="x", dataset="IEM", group_key="7", speaker_id="s",
            transcript="t", audio=AudioRef(path="a.npy", sample_rate=16_000),
        ).validate()


def test_mixed_dataset_tags_rejected():
    records = make_records(2, dataset="ESD") + make_records(2, dataset="MSP-P", orig_split=["train"])
    manifest = DatasetManifest(records=records)
    with pytest.raises(ManifestError, match="mixes dataset tags"):
        manifest.validate()


def test_round_trip_is_byte_identical(tmp_path):
    path1 = tmp_path / "a.jsonl"
    path2 = tmp_path / "b.jsonl"
    records = make_records(5, vad=(0.1, 0.5, 0.9))
    write_manifest(path1, manifest_of(records))
    write_manifest(path2, load_manifest(path1))
    assert path1.read_bytes() == path2.read_bytes()


def test_canonical_field_order(tmp_path):
    path = tmp_path / "m.jsonl"
    write_manifest(path, manifest_of(make_records(1)))
    row = json.loads(path.read_text().splitlines()[0])
    assert list(row)[:9] == [
        "utt_id", "dataset", "group_key", "speaker_id", "transcript",
        "emotion_cat", "vad", "vad_source", "audio",
    ]


def test_normalize_vad_scale():
    assert normalize_vad_scale((1, 3, 5)) == (0.0, 0.5, 1.0)
    with pytest.raises(ValueError, match="outside"):
        normalize_vad_scale((0.5, 3, 5))


def test_feature_audio_ref_round_trip(tmp_path):
    import numpy as np

    feats = np.zeros((4, 8))
    np.save(tmp_path / "f.npy", feats)
    ref = AudioRef(path="f.npy", features=True)
    assert ref.to_json() == {"feature_path": "f.npy"}
    back = AudioRef.from_json(ref.to_json())
    assert back.features
    loaded = back.resolve(tmp_path)
    assert loaded.shape == (4, 8)

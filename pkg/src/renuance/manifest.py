"""Uniform utterance manifest: record schema, validation, and JSONL I/O.

Manifests are JSONL, one record per line, with a canonical field order
(utt_id, dataset, group_key, speaker_id, transcript, emotion_cat, vad,
vad_source, audio, then optional extras) so that rewriting a loaded manifest
is byte-stable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .audio import Waveform, load_waveform

SCHEMA_VERSION = 1

EMOTION_CATEGORIES = ("neutral", "happy", "angry", "sad")
DATASET_TAGS = ("IEM", "ESD", "MSP-P", "synthetic")
VAD_SOURCES = ("gold", "pseudo", "absent")
IEMOCAP_SESSIONS = ("1", "2", "3", "4", "5")

_FIELD_ORDER = (
    "utt_id",
    "dataset",
    "group_key",
    "speaker_id",
    "transcript",
    "emotion_cat",
    "vad",
    "vad_source",
    "audio",
)


class ManifestError(ValueError):
    """Malformed or invariant-violating manifest content."""


@dataclass(frozen=True)
class AudioRef:
    """Pointer to a stored mono waveform (.npy) or a precomputed feature matrix."""

    path: str
    sample_rate: int | None = None
    features: bool = False

    def to_json(self) -> dict:
        if self.features:
            return {"feature_path": self.path}
        return {"path": self.path, "sample_rate": self.sample_rate}

    @staticmethod
    def from_json(obj: dict) -> "AudioRef":
        if "feature_path" in obj:
            return AudioRef(path=str(obj["feature_path"]), features=True)
        return AudioRef(path=str(obj["path"]), sample_rate=int(obj.get("sample_rate", 16_000)))

    def resolve(self, root: Path | None) -> Waveform | np.ndarray:
        """Load the referenced audio: a Waveform, or a (T, D) feature array."""
        p = Path(self.path)
        if not p.is_absolute() and root is not None:
            p = root / p
        if self.features:
            arr = np.asarray(np.load(p), dtype=np.float64)
            if arr.ndim != 2:
                raise ManifestError(f"feature file {p} must be 2-D (T, D), got shape {arr.shape}")
            return arr
        return load_waveform(p, sample_rate=self.sample_rate or 16_000)


@dataclass(frozen=True)
class UtteranceRecord:
    """One audio sample with transcript, labels, and split metadata."""

    utt_id: str
    dataset: str
    group_key: str
    speaker_id: str
    transcript: str
    audio: AudioRef
    emotion_cat: str | None = None
    vad: tuple[float, float, float] | None = None
    vad_source: str = "absent"
    orig_split: str | None = None  # corpus-native train/test tag (MSP-P style pools)

    def validate(self) -> None:
        if not self.utt_id:
            raise ManifestError("utt_id must be non-empty")
        if self.dataset not in DATASET_TAGS:
            raise ManifestError(f"record {self.utt_id}: unknown dataset tag {self.dataset!r}")
        if self.dataset == "IEM" and self.group_key not in IEMOCAP_SESSIONS:
            raise ManifestError(
                f"record {self.utt_id}: IEM group_key must be a session in 1..5, got {self.group_key!r}"
            )
        if self.emotion_cat is not None and self.emotion_cat not in EMOTION_CATEGORIES:
            raise ManifestError(
                f"record {self.utt_id}: emotion_cat {self.emotion_cat!r} not in {EMOTION_CATEGORIES}"
            )
        if self.vad_source not in VAD_SOURCES:
            raise ManifestError(f"record {self.utt_id}: bad vad_source {self.vad_source!r}")
        if self.vad is not None:
            if len(self.vad) != 3:
                raise ManifestError(f"record {self.utt_id}: vad must have 3 components")
            for component in self.vad:
                if not (0.0 <= component <= 1.0):
                    raise ManifestError(
                        f"record {self.utt_id}: vad component {component} outside [0, 1]"
                    )
            if self.vad_source == "absent":
                raise ManifestError(f"record {self.utt_id}: vad present but vad_source is absent")
        elif self.vad_source != "absent":
            raise ManifestError(f"record {self.utt_id}: vad_source {self.vad_source} without vad values")
        if self.orig_split is not None and self.orig_split not in ("train", "test"):
            raise ManifestError(f"record {self.utt_id}: orig_split must be train or test")

    def to_json(self) -> dict:
        row = {
            "utt_id": self.utt_id,
            "dataset": self.dataset,
            "group_key": self.group_key,
            "speaker_id": self.speaker_id,
            "transcript": self.transcript,
            "emotion_cat": self.emotion_cat,
            "vad": list(self.vad) if self.vad is not None else None,
            "vad_source": self.vad_source,
            "audio": self.audio.to_json(),
        }
        if self.orig_split is not None:
            row["orig_split"] = self.orig_split
        return row

    @staticmethod
    def from_json(obj: dict) -> "UtteranceRecord":
        vad = obj.get("vad")
        record = UtteranceRecord(
            utt_id=str(obj["utt_id"]),
            dataset=str(obj["dataset"]),
            group_key=str(obj["group_key"]),
            speaker_id=str(obj["speaker_id"]),
            transcript=str(obj["transcript"]),
            audio=AudioRef.from_json(obj["audio"]),
            emotion_cat=obj.get("emotion_cat"),
            vad=tuple(float(v) for v in vad) if vad is not None else None,
            vad_source=str(obj.get("vad_source", "absent")),
            orig_split=obj.get("orig_split"),
        )
        record.validate()
        return record


@dataclass
class DatasetManifest:
    """Ordered record collection; `root` anchors relative audio paths."""

    records: list[UtteranceRecord]
    schema_version: int = SCHEMA_VERSION
    root: Path | None = field(default=None, compare=False)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def validate(self) -> None:
        seen: set[str] = set()
        datasets: set[str] = set()
        for record in self.records:
            record.validate()
            if record.utt_id in seen:
                raise ManifestError(f"duplicate utt_id {record.utt_id!r}")
            seen.add(record.utt_id)
            datasets.add(record.dataset)
        if len(datasets) > 1:
            raise ManifestError(f"manifest mixes dataset tags: {sorted(datasets)}")

    def load_audio(self, record: UtteranceRecord) -> Waveform | np.ndarray:
        return record.audio.resolve(self.root)


def load_manifest(path: str | Path) -> DatasetManifest:
    """Parse and validate a JSONL manifest; parse errors carry line numbers."""
    path = Path(path)
    records: list[UtteranceRecord] = []
    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as err:
                raise ManifestError(f"{path}:{line_no}: malformed JSON ({err.msg})") from err
            try:
                records.append(UtteranceRecord.from_json(obj))
            except (KeyError, TypeError) as err:
                raise ManifestError(f"{path}:{line_no}: missing or bad field ({err})") from err
            except ManifestError as err:
                raise ManifestError(f"{path}:{line_no}: {err}") from err
    if not records:
        raise ManifestError(f"empty manifest: {path}")
    manifest = DatasetManifest(records=records, root=path.parent)
    manifest.validate()
    return manifest


def write_manifest(path: str | Path, manifest: DatasetManifest) -> None:
    """Serialize with canonical field order; stable across load/write cycles."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for record in manifest.records:
            row = record.to_json()
            ordered = {name: row[name] for name in _FIELD_ORDER}
            for extra in row:
                if extra not in _FIELD_ORDER:
                    ordered[extra] = row[extra]
            fh.write(json.dumps(ordered, ensure_ascii=False))
            fh.write("\n")


def normalize_vad_scale(values, low: float = 1.0, high: float = 5.0) -> tuple[float, float, float]:
    """Map corpus-native dimensional labels (e.g. 1..5) onto [0, 1]."""
    span = high - low
    out = tuple((float(v) - low) / span for v in values)
    for v in out:
        if not (0.0 <= v <= 1.0):
            raise ValueError(f"value {v} outside [0, 1] after rescaling from [{low}, {high}]")
    return out  # type: ignore[return-value]


def with_updated_record(manifest: DatasetManifest, index: int, **changes) -> DatasetManifest:
    records = list(manifest.records)
    records[index] = replace(records[index], **changes)
    return DatasetManifest(records=records, schema_version=manifest.schema_version, root=manifest.root)

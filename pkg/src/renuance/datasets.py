"""Split rules, seeded sampling, and pseudo dimensional labels.

Three corpus conventions are covered: session-held-out (session 5 is the test
set), grouped ratio splits where a parallel text never straddles the split,
and seeded subsampling of an oversized pool inside its native train/test
partition. Splits are pure functions of (manifest, seed).
"""

from __future__ import annotations

import json
import warnings
from collections import Counter, defaultdict
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .encoders import EmotionEncoderHandle, encode_emotion
from .manifest import DatasetManifest, ManifestError, UtteranceRecord, write_manifest


@dataclass
class SplitResult:
    train: DatasetManifest
    test: DatasetManifest
    seed: int
    rule: str


def _check_nonempty(manifest: DatasetManifest, op: str) -> None:
    if len(manifest) == 0:
        raise ManifestError(f"{op} requires a non-empty manifest")


def _submanifest(manifest: DatasetManifest, records: list[UtteranceRecord]) -> DatasetManifest:
    return DatasetManifest(records=records, schema_version=manifest.schema_version, root=manifest.root)


def split_iemocap(manifest: DatasetManifest) -> SplitResult:
    """Deterministic session-held-out split: session 5 records form the test set."""
    _check_nonempty(manifest, "split_iemocap")
    for record in manifest:
        if record.group_key not in ("1", "2", "3", "4", "5"):
            raise ManifestError(f"record {record.utt_id}: unknown session {record.group_key!r}")
    test = [r for r in manifest if r.group_key == "5"]
    train = [r for r in manifest if r.group_key != "5"]
    if not train or not test:
        warnings.warn("session split produced an empty side", stacklevel=2)
    return SplitResult(
        train=_submanifest(manifest, train),
        test=_submanifest(manifest, test),
        seed=0,
        rule="iemocap_session5",
    )


def split_esd(manifest: DatasetManifest, train_ratio: float = 0.7, seed: int = 0) -> SplitResult:
    """Grouped ratio split with per-emotion balance at group granularity.

    Groups (parallel texts) are bucketed by their emotion-count signature and
    shuffled within each bucket, so per-emotion counts land within one group
    of the requested ratio on each side and no group straddles the split.
    """
    _check_nonempty(manifest, "split_esd")
    if not (0.0 < train_ratio < 1.0):
        raise ValueError(f"train_ratio must be in (0, 1), got {train_ratio}")
    groups: dict[str, list[UtteranceRecord]] = defaultdict(list)
    for record in manifest:
        groups[record.group_key].append(record)
    if len(groups) < 2:
        raise ManifestError(f"grouped split needs at least 2 group_keys, got {len(groups)}")

    buckets: dict[tuple, list[str]] = defaultdict(list)
    for key in sorted(groups):
        signature = tuple(sorted(Counter(r.emotion_cat for r in groups[key]).items(), key=str))
        buckets[signature].append(key)

    rng = np.random.default_rng(seed)
    train_keys: set[str] = set()
    for signature in sorted(buckets, key=str):
        keys = buckets[signature]
        perm = rng.permutation(len(keys))
        n_train = int(np.floor(train_ratio * len(keys) + 0.5))
        train_keys.update(keys[i] for i in perm[:n_train])

    train = [r for r in manifest if r.group_key in train_keys]
    test = [r for r in manifest if r.group_key not in train_keys]
    if not train or not test:
        warnings.warn("grouped split produced an empty side", stacklevel=2)
    return SplitResult(
        train=_submanifest(manifest, train),
        test=_submanifest(manifest, test),
        seed=seed,
        rule=f"esd_grouped_{train_ratio}",
    )


def sample_msp(
    manifest: DatasetManifest,
    n_train: int = 4290,
    n_test: int = 1245,
    seed: int = 0,
) -> SplitResult:
    """Seeded subsample of an oversized pool, staying inside its native partition."""
    _check_nonempty(manifest, "sample_msp")
    pools = {"train": [], "test": []}
    for i, record in enumerate(manifest):
        if record.orig_split is None:
            raise ManifestError(
                f"record {record.utt_id} lacks the orig_split tag required for pool sampling"
            )
        pools[record.orig_split].append(i)
    for name, want in (("train", n_train), ("test", n_test)):
        if want > len(pools[name]):
            raise ManifestError(
                f"{name} pool too small: need {want}, have {len(pools[name])}"
            )
    rng = np.random.default_rng(seed)
    picks: dict[str, set[int]] = {}
    for name, want in (("train", n_train), ("test", n_test)):
        chosen = rng.choice(len(pools[name]), size=want, replace=False)
        picks[name] = {pools[name][i] for i in chosen}
    records = manifest.records
    train = [records[i] for i in sorted(picks["train"])]
    test = [records[i] for i in sorted(picks["test"])]
    return SplitResult(
        train=_submanifest(manifest, train),
        test=_submanifest(manifest, test),
        seed=seed,
        rule=f"msp_sample_{n_train}_{n_test}",
    )


def generate_pseudo_dimensional_labels(
    manifest: DatasetManifest,
    encoder: EmotionEncoderHandle,
) -> DatasetManifest:
    """Fill missing VAD labels from the frozen encoder's pooled prediction.

    Gold labels are never overwritten (a warning is emitted per gold record);
    records already pseudo-labeled are left alone, so the operation is
    idempotent.
    """
    out: list[UtteranceRecord] = []
    for record in manifest:
        if record.vad is not None:
            if record.vad_source == "gold":
                warnings.warn(f"record {record.utt_id} already has gold vad; not overwritten", stacklevel=2)
            out.append(record)
            continue
        try:
            if hasattr(encoder, "encode_path"):
                p = Path(record.audio.path)
                if not p.is_absolute() and manifest.root is not None:
                    p = manifest.root / p
                _, vad = encoder.encode_path(p)
            else:
                _, vad = encode_emotion(manifest.load_audio(record), encoder)
        except Exception as err:
            raise ManifestError(f"pseudo-labeling failed for {record.utt_id}: {err}") from err
        out.append(replace(record, vad=vad.as_tuple(), vad_source="pseudo"))
    return DatasetManifest(records=out, schema_version=manifest.schema_version, root=manifest.root)


def write_split_result(out_dir: str | Path, result: SplitResult) -> dict:
    """Persist both sides plus a JSON sidecar {seed, rule, counts}."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_manifest(out_dir / "train.jsonl", result.train)
    write_manifest(out_dir / "test.jsonl", result.test)
    sidecar = {
        "seed": result.seed,
        "rule": result.rule,
        "counts": {"train": len(result.train), "test": len(result.test)},
    }
    (out_dir / "split_info.json").write_text(json.dumps(sidecar, indent=2), encoding="utf-8")
    return sidecar

"""Deterministic synthetic speech corpus for tests and demos.

Each emotion gets a characteristic pitch contour and a VAD prototype, so the
audio carries enough signal to separate the four classes while staying tiny.
Waveforms are written as .npy files next to a JSONL manifest.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .audio import DEFAULT_SAMPLE_RATE, Waveform, save_waveform
from .manifest import AudioRef, DatasetManifest, UtteranceRecord, write_manifest

EMOTION_PROFILES = {
    "neutral": {"f0": 150.0, "vibrato": 2.0, "vad": (0.50, 0.40, 0.50)},
    "happy": {"f0": 320.0, "vibrato": 8.0, "vad": (0.82, 0.72, 0.60)},
    "angry": {"f0": 240.0, "vibrato": 14.0, "vad": (0.20, 0.82, 0.70)},
    "sad": {"f0": 105.0, "vibrato": 1.0, "vad": (0.25, 0.28, 0.33)},
}

TRANSCRIPT_POOL = {
    "neutral": [
        "The meeting starts at nine tomorrow.",
        "I left the keys on the kitchen table.",
        "The train was on time today.",
        "We repainted the fence last weekend.",
    ],
    "happy": [
        "I finally got the job offer!",
        "We are going to the coast this summer.",
        "My sister is coming to visit next week.",
        "The garden is full of tomatoes this year.",
    ],
    "angry": [
        "They cancelled my reservation without telling me.",
        "Someone scratched my car in the lot again.",
        "The refund never showed up after six weeks.",
        "He took credit for the work I did.",
    ],
    "sad": [
        "Why should I purchase my own?",
        "I haven't heard from her since March.",
        "The old house is being torn down.",
        "We had to cancel the trip again.",
    ],
}


def synth_waveform(
    emotion: str,
    seed: int,
    duration: float = 0.35,
    sample_rate: int = DEFAULT_SAMPLE_RATE,
) -> Waveform:
    """A pitched, lightly noisy tone whose contour encodes the emotion."""
    profile = EMOTION_PROFILES[emotion]
    rng = np.random.default_rng(seed)
    n = int(duration * sample_rate)
    t = np.arange(n) / sample_rate
    f0 = profile["f0"] * (1.0 + 0.03 * (rng.random() - 0.5))
    phase = 2 * np.pi * f0 * t + 0.8 * np.sin(2 * np.pi * profile["vibrato"] * t)
    tone = np.sin(phase) + 0.4 * np.sin(2 * phase) + 0.2 * np.sin(3 * phase)
    envelope = np.minimum(1.0, 10.0 * t) * np.minimum(1.0, 10.0 * (duration - t))
    noise = 0.02 * rng.standard_normal(n)
    return Waveform(samples=0.3 * envelope * tone + noise, sample_rate=sample_rate)


def make_synthetic_corpus(
    out_dir: str | Path,
    n_records: int = 24,
    seed: int = 0,
    with_gold_vad: bool = True,
    duration: float = 0.35,
) -> Path:
    """Write waveforms plus a manifest; returns the manifest path.

    Emotions cycle so all four classes appear whenever n_records >= 4. VAD
    labels are the emotion prototype with a small seeded jitter.
    """
    out_dir = Path(out_dir)
    audio_dir = out_dir / "audio"
    audio_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    emotions = list(EMOTION_PROFILES)
    records = []
    for i in range(n_records):
        emotion = emotions[i % len(emotions)]
        utt_id = f"synth-{i:04d}"
        wave = synth_waveform(emotion, seed=seed * 100_003 + i, duration=duration)
        rel_path = f"audio/{utt_id}.npy"
        save_waveform(out_dir / rel_path, wave)
        vad = None
        vad_source = "absent"
        if with_gold_vad:
            proto = EMOTION_PROFILES[emotion]["vad"]
            jitter = 0.04 * (rng.random(3) - 0.5)
            vad = tuple(float(np.clip(p + j, 0.0, 1.0)) for p, j in zip(proto, jitter))
            vad_source = "gold"
        pool = TRANSCRIPT_POOL[emotion]
        records.append(UtteranceRecord(
            utt_id=utt_id,
            dataset="synthetic",
            group_key=f"g{i % 10}",
            speaker_id=f"spk{i % 4}",
            transcript=pool[(i // len(emotions)) % len(pool)],
            audio=AudioRef(path=rel_path, sample_rate=wave.sample_rate),
            emotion_cat=emotion,
            vad=vad,
            vad_source=vad_source,
        ))
    manifest = DatasetManifest(records=records, root=out_dir)
    manifest.validate()
    manifest_path = out_dir / "manifest.jsonl"
    write_manifest(manifest_path, manifest)
    return manifest_path

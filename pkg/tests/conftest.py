"""Shared fixtures: toy model geometry, a synthetic corpus, and the FD oracle."""

from __future__ import annotations

import numpy as np
import pytest

from renuance import autodiff as ad
from renuance.adapter import AdapterConfig
from renuance.encoders import SpeechEncoderConfig
from renuance.lm import LMConfig
from renuance.manifest import AudioRef, DatasetManifest, UtteranceRecord
from renuance.synthetic import make_synthetic_corpus
from renuance.training import ModelConfig


def finite_difference(fn, params: dict[str, ad.Tensor], step: float = 1e-5) -> dict[str, np.ndarray]:
    """Central-difference gradient of a scalar-valued fn over every element."""
    grads = {}
    for name, t in params.items():
        g = np.zeros_like(t.value)
        flat = t.value.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = fn().item()
            flat[i] = orig - step
            down = fn().item()
            flat[i] = orig
            gflat[i] = (up - down) / (2 * step)
        grads[name] = g
    return grads


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    denom = np.maximum(np.abs(a) + np.abs(b), 1e-8)
    return float(np.max(np.abs(a - b) / denom))


def check_gradients(fn, params: dict[str, ad.Tensor], tol: float = 1e-4, step: float = 1e-5):
    """Backprop through fn() and compare every parameter against central FD."""
    ad.zero_grads(params)
    out = fn()
    out.backward()
    numeric = finite_difference(fn, params, step=step)
    worst = 0.0
    for name, t in params.items():
        assert t.grad is not None, f"no gradient for {name}"
        err = rel_error(t.grad, numeric[name])
        worst = max(worst, err)
        assert err <= tol, f"{name}: rel error {err:.3e} > {tol}"
    return worst


def toy_model_config(emotion_dim: int = 6, model_dim: int = 16, vocab: int = 300) -> ModelConfig:
    return ModelConfig(
        speech=SpeechEncoderConfig(n_mels=8, layers=2, hidden_dim=10, win_length=128, hop_length=64),
        adapter=AdapterConfig(out_dim=model_dim, bottleneck_dim=24),
        lm=LMConfig(vocab_size=vocab, layers=1, heads=2, model_dim=model_dim, max_positions=256),
        emotion_dim=emotion_dim,
        emotion_n_mels=8,
        emotion_seed=99,
        emotion_align="framewise",
    )


@pytest.fixture
def toy_model() -> ModelConfig:
    return toy_model_config()


@pytest.fixture(scope="session")
def corpus_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("synth_corpus")
    make_synthetic_corpus(root, n_records=16, seed=5, duration=0.12)
    return root


def make_records(
    n: int,
    dataset: str = "synthetic",
    group_keys=None,
    emotions=None,
    orig_split=None,
    vad=None,
) -> list[UtteranceRecord]:
    """In-memory records for split tests; audio paths are never resolved."""
    emotions = emotions or ["neutral", "happy", "angry", "sad"]
    records = []
    for i in range(n):
        records.append(UtteranceRecord(
            utt_id=f"{dataset}-{i:05d}",
            dataset=dataset,
            group_key=str(group_keys[i % len(group_keys)]) if group_keys else f"g{i}",
            speaker_id=f"spk{i % 3}",
            transcript=f"utterance number {i}",
            audio=AudioRef(path=f"audio/{i}.npy", sample_rate=16_000),
            emotion_cat=emotions[i % len(emotions)],
            vad=vad,
            vad_source="gold" if vad else "absent",
            orig_split=orig_split[i % len(orig_split)] if orig_split else None,
        ))
    return records


def manifest_of(records) -> DatasetManifest:
    m = DatasetManifest(records=list(records))
    m.validate()
    return m


@pytest.fixture
def rng():
    return np.random.default_rng(123)

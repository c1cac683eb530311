"""Speech/emotion encoder contracts: determinism, frozenness, resampling."""

from __future__ import annotations

import numpy as np
import pytest

from renuance import autodiff as ad
from renuance.audio import Waveform, log_mel, num_frames
from renuance.encoders import (
    EmbeddingSequence,
    EmotionEncoderHandle,
    SpeechEncoderConfig,
    align_emotion_stream,
    encode_emotion,
    encode_speech,
    init_speech_params,
    resample_frames,
)
from renuance.synthetic import synth_waveform

from conftest import check_gradients

TOY_SPEECH = SpeechEncoderConfig(n_mels=8, layers=2, hidden_dim=10, win_length=128, hop_length=64)


@pytest.fixture
def wave():
    return synth_waveform("happy", seed=42, duration=0.1)


def test_encode_speech_deterministic(wave):
    params = init_speech_params(TOY_SPEECH, seed=0)
    a = encode_speech(wave, TOY_SPEECH, params)
    b = encode_speech(wave, TOY_SPEECH, params)
    np.testing.assert_array_equal(a.array, b.array)
    assert a.width == TOY_SPEECH.hidden_dim


def test_encode_speech_zero_audio_finite():
    params = init_speech_params(TOY_SPEECH, seed=0)
    silent = Waveform(samples=np.zeros(1600), sample_rate=16_000)
    out = encode_speech(silent, TOY_SPEECH, params)
    assert np.isfinite(out.array).all()


def test_encode_speech_rejects_empty_audio_and_nan_params():
    params = init_speech_params(TOY_SPEECH, seed=0)
    with pytest.raises(ValueError, match="empty"):
        encode_speech(Waveform(samples=np.zeros(0)), TOY_SPEECH, params)
    params["layer0.w"].value[0, 0] = np.nan
    wave = synth_waveform("sad", seed=0, duration=0.1)
    with pytest.raises(ValueError, match="NaN"):
        encode_speech(wave, TOY_SPEECH, params)


def test_encode_speech_length_law_is_pure():
    params = init_speech_params(TOY_SPEECH, seed=0)
    w1 = synth_waveform("sad", seed=1, duration=0.1)
    w2 = synth_waveform("angry", seed=2, duration=0.1)
    assert len(w1) == len(w2)
    t1 = encode_speech(w1, TOY_SPEECH, params).length
    t2 = encode_speech(w2, TOY_SPEECH, params).length
    assert t1 == t2 == num_frames(len(w1), 128, 64)


def test_encode_speech_gradients_match_fd(wave):
    params = init_speech_params(TOY_SPEECH, seed=3)
    readout = np.random.default_rng(0).standard_normal((num_frames(len(wave), 128, 64), TOY_SPEECH.hidden_dim))

    def fn():
        return ad.tensor_sum(encode_speech(wave, TOY_SPEECH, params).frames * readout)

    check_gradients(fn, params, tol=1e-4)


def test_encode_speech_accepts_precomputed_features(wave):
    params = init_speech_params(TOY_SPEECH, seed=0)
    feats = log_mel(wave, 8, 128, 64)
    from_wave = encode_speech(wave, TOY_SPEECH, params)
    from_feats = encode_speech(feats, TOY_SPEECH, params)
    np.testing.assert_array_equal(from_wave.array, from_feats.array)


def test_emotion_encoder_frozen_and_deterministic(wave):
    handle = EmotionEncoderHandle.from_seed(5, emb_dim=6, n_mels=8, win_length=128, hop_length=64)
    seq1, vad1 = encode_emotion(wave, handle)
    seq2, vad2 = encode_emotion(wave, handle)
    np.testing.assert_array_equal(seq1.array, seq2.array)
    assert vad1 == vad2
    assert all(0.0 <= v <= 1.0 for v in vad1.as_tuple())
    assert not seq1.frames.requires_grad  # constants: no gradient path exists
    with pytest.raises(ValueError):
        handle.weights["vad.w"][0, 0] = 99.0  # immutable


def test_emotion_encoder_checksum_stable_across_reconstruction():
    a = EmotionEncoderHandle.from_seed(5, emb_dim=6, n_mels=8)
    b = EmotionEncoderHandle.from_seed(5, emb_dim=6, n_mels=8)
    c = EmotionEncoderHandle.from_seed(6, emb_dim=6, n_mels=8)
    assert a.checksum() == b.checksum()
    assert a.checksum() != c.checksum()


def test_emotion_encoder_save_load_verifies_checksum(tmp_path):
    handle = EmotionEncoderHandle.from_seed(5, emb_dim=6, n_mels=8, win_length=128, hop_length=64)
    path = tmp_path / "emo.npz"
    handle.save(path)
    loaded = EmotionEncoderHandle.load(path)
    assert loaded.checksum() == handle.checksum()
    assert loaded.emb_dim == 6


def test_resample_frames_nearest_floor():
    seq = EmbeddingSequence(frames=np.arange(8.0).reshape(4, 2))
    down = resample_frames(seq, 2)
    np.testing.assert_array_equal(down.array, seq.array[[0, 2]])
    same = resample_frames(seq, 4)
    np.testing.assert_array_equal(same.array, seq.array)
    up = resample_frames(EmbeddingSequence(frames=np.array([[1.0, 2.0]])), 3)
    np.testing.assert_array_equal(up.array, np.array([[1.0, 2.0]] * 3))
    with pytest.raises(ValueError, match=">= 1"):
        resample_frames(seq, 0)


def test_resample_upsample_then_downsample_identity(rng):
    for t in (1, 3, 5, 8):
        for k in (1, 2, 3):
            frames = rng.standard_normal((t, 4))
            seq = EmbeddingSequence(frames=frames)
            restored = resample_frames(resample_frames(seq, k * t), t)
            np.testing.assert_array_equal(restored.array, frames)


def test_align_emotion_stream_pooled_broadcast(rng):
    frames = rng.standard_normal((5, 3))
    seq = EmbeddingSequence(frames=frames)
    pooled = align_emotion_stream(seq, 4, mode="pooled")
    assert pooled.array.shape == (4, 3)
    np.testing.assert_allclose(pooled.array, np.tile(frames.mean(axis=0), (4, 1)))
    with pytest.raises(ValueError, match="alignment mode"):
        align_emotion_stream(seq, 4, mode="nope")


def test_subprocess_emotion_backend(tmp_path):
    import sys

    from renuance.encoders import SubprocessEmotionBackend

    script = tmp_path / "backend.py"
    script.write_text(
        "import json, sys\n"
        "import numpy as np\n"
        "wave = np.load(sys.argv[1])\n"
        "frames = [[float(wave[:100].mean()), 0.5]] * 3\n"
        "print(json.dumps({'frames': frames, 'vad': [0.2, 0.6, 0.9]}))\n",
        encoding="utf-8",
    )
    wave_path = tmp_path / "w.npy"
    np.save(wave_path, synth_waveform("sad", seed=1, duration=0.05).samples)
    backend = SubprocessEmotionBackend(cmd=[sys.executable, str(script)])
    frames, vad = backend.encode_path(wave_path)
    assert frames.shape == (3, 2)
    assert vad.as_tuple() == (0.2, 0.6, 0.9)

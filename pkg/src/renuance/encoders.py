"""The two embedding streams: a trainable speech encoder and a frozen emotion encoder.

The speech encoder is a log-mel (or raw-frame) frontend followed by a stack of
position-wise tanh layers; its parameters live on the autodiff tape. The
emotion encoder is a fixed-seed convolutional stack in plain numpy with a
pooled affine+sigmoid head predicting valence/arousal/dominance; it is frozen
by construction and its outputs enter downstream graphs as constants, so no
gradient can ever reach it. An external-backend adapter lets a real pretrained
model be substituted through a subprocess JSON contract.
"""

from __future__ import annotations

import hashlib
import json
import subprocess
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .audio import DEFAULT_HOP_LENGTH, DEFAULT_WIN_LENGTH, Waveform, log_mel, num_frames


@dataclass
class EmbeddingSequence:
    """Time-major sequence of fixed-width real vectors."""

    frames: ad.Tensor
    frame_rate_hint: float = 0.0

    def __post_init__(self):
        if not isinstance(self.frames, ad.Tensor):
            self.frames = ad.Tensor(self.frames)
        if self.frames.value.ndim != 2:
            raise ValueError(f"frames must be 2-D (T, D), got shape {self.frames.value.shape}")
        if self.frames.value.shape[0] < 1:
            raise ValueError("embedding sequence needs at least one frame")
        if not np.isfinite(self.frames.value).all():
            raise ValueError("embedding sequence contains non-finite values")

    @property
    def length(self) -> int:
        return self.frames.value.shape[0]

    @property
    def width(self) -> int:
        return self.frames.value.shape[1]

    @property
    def array(self) -> np.ndarray:
        return self.frames.value


@dataclass(frozen=True)
class VADPrediction:
    valence: float
    arousal: float
    dominance: float

    def __post_init__(self):
        for name, v in zip(("valence", "arousal", "dominance"), self.as_tuple()):
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"{name} {v} outside [0, 1]")

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.valence, self.arousal, self.dominance)


@dataclass(frozen=True)
class SpeechEncoderConfig:
    """Geometry of the trainable speech encoder."""

    input_feature: str = "log-mel"  # or "raw-wave"
    n_mels: int = 80
    layers: int = 2
    hidden_dim: int = 64
    win_length: int = DEFAULT_WIN_LENGTH
    hop_length: int = DEFAULT_HOP_LENGTH
    trainable: bool = True

    def __post_init__(self):
        if self.input_feature not in ("log-mel", "raw-wave"):
            raise ValueError(f"unknown input_feature {self.input_feature!r}")
        if self.layers < 1 or self.hidden_dim < 1:
            raise ValueError("layers and hidden_dim must be >= 1")

    @property
    def feature_dim(self) -> int:
        return self.n_mels if self.input_feature == "log-mel" else self.win_length


def init_speech_params(config: SpeechEncoderConfig, seed: int) -> dict[str, ad.Tensor]:
    """Uniform fan-in initialization for the position-wise layer stack."""
    rng = np.random.default_rng(seed)
    params: dict[str, ad.Tensor] = {}
    in_dim = config.feature_dim
    for i in range(config.layers):
        params[f"layer{i}.w"] = ad.parameter(None, rng=rng, fan_in=in_dim, shape=(in_dim, config.hidden_dim))
        params[f"layer{i}.b"] = ad.parameter(np.zeros(config.hidden_dim))
        in_dim = config.hidden_dim
    return params


def _speech_features(audio: Waveform | np.ndarray, config: SpeechEncoderConfig) -> tuple[np.ndarray, float]:
    if isinstance(audio, np.ndarray):
        feats = np.asarray(audio, dtype=np.float64)
        if feats.ndim != 2:
            raise ValueError("precomputed features must be 2-D (T, D)")
        if feats.shape[1] != config.feature_dim:
            raise ValueError(
                f"feature width {feats.shape[1]} does not match encoder input {config.feature_dim}"
            )
        return feats, 0.0
    if len(audio) == 0:
        raise ValueError("cannot encode empty audio")
    rate = audio.sample_rate / config.hop_length
    if config.input_feature == "log-mel":
        return log_mel(audio, config.n_mels, config.win_length, config.hop_length), rate
    t = num_frames(len(audio), config.win_length, config.hop_length)
    if t < 1:
        raise ValueError("audio too short for one analysis window")
    starts = np.arange(t) * config.hop_length
    frames = audio.samples[starts[:, None] + np.arange(config.win_length)[None, :]]
    return frames, rate


def encode_speech(
    audio: Waveform | np.ndarray,
    config: SpeechEncoderConfig,
    params: dict[str, ad.Tensor],
) -> EmbeddingSequence:
    """Trainable encoding of a waveform (or precomputed features) to (T, D) frames.

    T is a pure function of the input length; the output is differentiable
    with respect to every entry of `params`.
    """
    for name, p in params.items():
        if not np.isfinite(p.value).all():
            raise ValueError(f"NaN in speech encoder params: {name}")
    feats, rate = _speech_features(audio, config)
    h: ad.Tensor = ad.Tensor(feats)
    for i in range(config.layers):
        h = ad.tanh(h @ params[f"layer{i}.w"] + params[f"layer{i}.b"])
    return EmbeddingSequence(frames=h, frame_rate_hint=rate)


# -- frozen emotion encoder ---------------------------------------------------


def _conv1d_same(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Plain-numpy stride-1 "same" convolution; x (T, C_in), w (C_out, C_in, K)."""
    t, _ = x.shape
    k = w.shape[2]
    pad = k // 2
    xpad = np.zeros((t + 2 * pad, x.shape[1]))
    xpad[pad:pad + t] = x
    idx = np.arange(t)[:, None] + np.arange(k)[None, :]
    patches = xpad[idx]  # (T, K, C_in)
    return np.tensordot(patches, w, axes=([1, 2], [2, 1])) + b


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))


@dataclass(frozen=True)
class EmotionEncoderHandle:
    """Frozen emotion encoder: immutable weights, deterministic outputs."""

    weights: dict[str, np.ndarray]
    emb_dim: int
    n_mels: int = 32
    win_length: int = DEFAULT_WIN_LENGTH
    hop_length: int = DEFAULT_HOP_LENGTH
    seed: int = 0

    def __post_init__(self):
        for arr in self.weights.values():
            arr.flags.writeable = False

    @staticmethod
    def from_seed(
        seed: int,
        emb_dim: int = 16,
        n_mels: int = 32,
        win_length: int = DEFAULT_WIN_LENGTH,
        hop_length: int = DEFAULT_HOP_LENGTH,
    ) -> "EmotionEncoderHandle":
        rng = np.random.default_rng(seed)

        def uniform(fan_in, shape):
            bound = 1.0 / np.sqrt(fan_in)
            return rng.uniform(-bound, bound, size=shape)

        weights = {
            "conv0.w": uniform(n_mels * 3, (emb_dim, n_mels, 3)),
            "conv0.b": np.zeros(emb_dim),
            "conv1.w": uniform(emb_dim * 3, (emb_dim, emb_dim, 3)),
            "conv1.b": np.zeros(emb_dim),
            "vad.w": uniform(emb_dim, (emb_dim, 3)) * 4.0,  # spread the squashed range
            "vad.b": np.zeros(3),
        }
        return EmotionEncoderHandle(
            weights=weights, emb_dim=emb_dim, n_mels=n_mels,
            win_length=win_length, hop_length=hop_length, seed=seed,
        )

    def checksum(self) -> str:
        digest = hashlib.sha256()
        for name in sorted(self.weights):
            digest.update(name.encode())
            digest.update(np.ascontiguousarray(self.weights[name]).tobytes())
        return digest.hexdigest()

    def save(self, path: str | Path) -> None:
        meta = {
            "emb_dim": self.emb_dim, "n_mels": self.n_mels,
            "win_length": self.win_length, "hop_length": self.hop_length,
            "seed": self.seed, "checksum": self.checksum(),
        }
        np.savez(Path(path), __meta__=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8), **self.weights)

    @staticmethod
    def load(path: str | Path) -> "EmotionEncoderHandle":
        data = np.load(Path(path))
        meta = json.loads(bytes(data["__meta__"]).decode())
        weights = {k: np.array(data[k]) for k in data.files if k != "__meta__"}
        handle = EmotionEncoderHandle(
            weights=weights, emb_dim=meta["emb_dim"], n_mels=meta["n_mels"],
            win_length=meta["win_length"], hop_length=meta["hop_length"], seed=meta["seed"],
        )
        if handle.checksum() != meta["checksum"]:
            raise ValueError(f"emotion encoder weight file {path} failed its checksum")
        return handle


def encode_emotion(
    audio: Waveform | np.ndarray,
    handle: EmotionEncoderHandle,
) -> tuple[EmbeddingSequence, VADPrediction]:
    """Frozen framewise emotion embedding plus its pooled dimensional prediction.

    Output tensors carry no gradient tape, so training can never perturb the
    handle's weights through this path.
    """
    if isinstance(audio, np.ndarray):
        feats = np.asarray(audio, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[1] != handle.n_mels:
            raise ValueError(f"precomputed emotion features must be (T, {handle.n_mels})")
        rate = 0.0
    else:
        if len(audio) == 0:
            raise ValueError("cannot encode empty audio")
        feats = log_mel(audio, handle.n_mels, handle.win_length, handle.hop_length)
        rate = audio.sample_rate / handle.hop_length
    w = handle.weights
    h = np.tanh(_conv1d_same(feats, w["conv0.w"], w["conv0.b"]))
    h = np.tanh(_conv1d_same(h, w["conv1.w"], w["conv1.b"]))
    pooled = h.mean(axis=0)
    vad = _sigmoid(pooled @ w["vad.w"] + w["vad.b"])
    seq = EmbeddingSequence(frames=ad.Tensor(h), frame_rate_hint=rate)
    return seq, VADPrediction(valence=float(vad[0]), arousal=float(vad[1]), dominance=float(vad[2]))


# -- frame alignment ----------------------------------------------------------


def resample_frames(seq: EmbeddingSequence, target_len: int) -> EmbeddingSequence:
    """Nearest-floor resampling: output frame i is input frame floor(i*T/target)."""
    if target_len < 1:
        raise ValueError(f"target_len must be >= 1, got {target_len}")
    t = seq.length
    if target_len == t:
        return seq
    idx = (np.arange(target_len) * t) // target_len
    return EmbeddingSequence(
        frames=ad.take_rows(seq.frames, idx),
        frame_rate_hint=seq.frame_rate_hint * target_len / t if seq.frame_rate_hint else 0.0,
    )


def align_emotion_stream(seq: EmbeddingSequence, target_len: int, mode: str = "framewise") -> EmbeddingSequence:
    """Match the emotion stream to the speech stream's length.

    "framewise" keeps temporal dynamics via nearest-floor resampling;
    "pooled" broadcasts the time-mean embedding to every step.
    """
    if mode == "framewise":
        return resample_frames(seq, target_len)
    if mode == "pooled":
        mean = ad.tensor_mean(seq.frames, axis=0, keepdims=True)
        return EmbeddingSequence(frames=ad.take_rows(mean, np.zeros(target_len, dtype=np.intp)))
    raise ValueError(f"unknown emotion alignment mode {mode!r}")


def empty_emotion_stream(target_len: int) -> EmbeddingSequence:
    """Width-zero stand-in used by the no-emotion-encoder ablation."""
    seq = EmbeddingSequence.__new__(EmbeddingSequence)
    seq.frames = ad.Tensor(np.zeros((target_len, 0)))
    seq.frame_rate_hint = 0.0
    return seq


# -- external backend ---------------------------------------------------------


@dataclass
class SubprocessEmotionBackend:
    """Swap-in for the toy encoder: `cmd <audio_path>` prints frames + VAD as JSON."""

    cmd: list[str]
    timeout: float = 60.0

    def encode_path(self, audio_path: str | Path) -> tuple[np.ndarray, VADPrediction]:
        result = subprocess.run(
            [*self.cmd, str(audio_path)],
            capture_output=True, text=True, timeout=self.timeout, check=True,
        )
        payload = json.loads(result.stdout)
        frames = np.asarray(payload["frames"], dtype=np.float64)
        v, a, d = (float(x) for x in payload["vad"])
        return frames, VADPrediction(valence=v, arousal=a, dominance=d)


@dataclass
class HandleBackend:
    """Adapter giving the in-process toy encoder the same path-based contract."""

    handle: EmotionEncoderHandle
    sample_rate: int = 16_000

    def encode_path(self, audio_path: str | Path) -> tuple[np.ndarray, VADPrediction]:
        from .audio import load_waveform

        wave = load_waveform(audio_path, sample_rate=self.sample_rate)
        seq, vad = encode_emotion(wave, self.handle)
        return seq.array, vad

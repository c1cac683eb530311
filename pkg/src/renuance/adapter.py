"""Modality adapter: channel concat, conv length law, and the adapter forward.

Defaults are three 1-D conv layers (kernel 5, stride 2, padding 2) followed by
a position-wise two-layer feedforward with a 512-unit bottleneck, so the time
axis shrinks by a factor of 8. Inputs shorter than stride**n_conv_layers
frames are rejected rather than padded, since silent padding would corrupt
pooled emotion statistics downstream.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .encoders import EmbeddingSequence


@dataclass(frozen=True)
class AdapterConfig:
    out_dim: int  # LM embedding width
    n_conv_layers: int = 3
    kernel: int = 5
    stride: int = 2
    padding: int = 2
    bottleneck_dim: int = 512

    def __post_init__(self):
        for name in ("out_dim", "n_conv_layers", "kernel", "stride", "padding", "bottleneck_dim"):
            if getattr(self, name) < (0 if name == "padding" else 1):
                raise ValueError(f"AdapterConfig.{name} must be positive")

    @property
    def min_input_length(self) -> int:
        return self.stride**self.n_conv_layers


@dataclass
class FusedEmbeddingSequence:
    """Adapter output: (T_f, M) frames ready for the language model."""

    frames: ad.Tensor

    def __post_init__(self):
        if not isinstance(self.frames, ad.Tensor):
            self.frames = ad.Tensor(self.frames)
        if self.frames.value.ndim != 2 or self.frames.value.shape[0] < 1:
            raise ValueError("fused sequence must be (T_f >= 1, M)")
        if not np.isfinite(self.frames.value).all():
            raise ValueError("fused sequence contains non-finite values")

    @property
    def length(self) -> int:
        return self.frames.value.shape[0]

    @property
    def width(self) -> int:
        return self.frames.value.shape[1]

    @property
    def array(self) -> np.ndarray:
        return self.frames.value


def concat_embeddings(raw: EmbeddingSequence, emo: EmbeddingSequence) -> EmbeddingSequence:
    """Channelwise [raw | emo] concat; the streams must already be length-aligned."""
    if raw.length != emo.length:
        raise ValueError(
            f"stream length mismatch ({raw.length} vs {emo.length}); "
            "resample_frames the emotion stream to the speech stream first"
        )
    if emo.width == 0:
        return raw
    return EmbeddingSequence(
        frames=ad.concat([raw.frames, emo.frames], axis=1),
        frame_rate_hint=raw.frame_rate_hint,
    )


def adapter_output_length(t_in: int, config: AdapterConfig) -> int:
    """Iterated conv arithmetic: floor((L + 2p - k)/s) + 1, once per layer."""
    if t_in < 1:
        raise ValueError("t_in must be >= 1")
    length = t_in
    for _ in range(config.n_conv_layers):
        length = (length + 2 * config.padding - config.kernel) // config.stride + 1
        if length < 1:
            raise ValueError(f"input too short for adapter (length collapsed from {t_in})")
    return length


def init_adapter_params(config: AdapterConfig, in_dim: int, seed: int) -> dict[str, ad.Tensor]:
    rng = np.random.default_rng(seed)
    params: dict[str, ad.Tensor] = {}
    channels = in_dim
    for i in range(config.n_conv_layers):
        fan_in = channels * config.kernel
        params[f"conv{i}.w"] = ad.parameter(None, rng=rng, fan_in=fan_in, shape=(config.out_dim, channels, config.kernel))
        params[f"conv{i}.b"] = ad.parameter(np.zeros(config.out_dim))
        channels = config.out_dim
    params["bottleneck.w1"] = ad.parameter(None, rng=rng, fan_in=config.out_dim, shape=(config.out_dim, config.bottleneck_dim))
    params["bottleneck.b1"] = ad.parameter(np.zeros(config.bottleneck_dim))
    params["bottleneck.w2"] = ad.parameter(None, rng=rng, fan_in=config.bottleneck_dim, shape=(config.bottleneck_dim, config.out_dim))
    params["bottleneck.b2"] = ad.parameter(np.zeros(config.out_dim))
    return params


def adapt(seq: EmbeddingSequence, params: dict[str, ad.Tensor], config: AdapterConfig) -> FusedEmbeddingSequence:
    """Run the conv stack plus bottleneck feedforward over a concatenated stream."""
    expected_in = params["conv0.w"].value.shape[1]
    if seq.width != expected_in:
        raise ValueError(f"adapter expects input width {expected_in}, got {seq.width}")
    if seq.length < config.min_input_length:
        raise ValueError(
            f"input too short for adapter: {seq.length} < {config.min_input_length} frames (no padding applied)"
        )
    if not np.isfinite(seq.array).all():
        raise ValueError("adapter input contains non-finite values")
    for name, p in params.items():
        if not np.isfinite(p.value).all():
            raise ValueError(f"NaN in adapter params: {name}")
    h = seq.frames
    for i in range(config.n_conv_layers):
        h = ad.conv1d(h, params[f"conv{i}.w"], params[f"conv{i}.b"], stride=config.stride, padding=config.padding)
        h = ad.tanh(h)
    h = ad.tanh(h @ params["bottleneck.w1"] + params["bottleneck.b1"])
    h = h @ params["bottleneck.w2"] + params["bottleneck.b2"]
    return FusedEmbeddingSequence(frames=h)

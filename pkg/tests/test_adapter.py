"""Adapter length law, concat semantics, and gradient checks."""

from __future__ import annotations

import numpy as np
import pytest

from renuance import autodiff as ad
from renuance.adapter import (
    AdapterConfig,
    adapt,
    adapter_output_length,
    concat_embeddings,
    init_adapter_params,
)
from renuance.encoders import EmbeddingSequence, empty_emotion_stream

from conftest import check_gradients

TOY = AdapterConfig(out_dim=6, bottleneck_dim=12)


def expected_length(t_in: int, config: AdapterConfig) -> int:
    """Independent evaluation of the per-layer conv arithmetic."""
    length = t_in
    for _ in range(config.n_conv_layers):
        length = (length + 2 * config.padding - config.kernel) // config.stride + 1
    return length


def test_default_config_matches_published_geometry():
    config = AdapterConfig(out_dim=8)
    assert (config.n_conv_layers, config.kernel, config.stride, config.padding) == (3, 5, 2, 2)
    assert config.bottleneck_dim == 512


def test_length_law_examples():
    assert adapter_output_length(80, TOY) == 10
    assert adapter_output_length(8, TOY) == 1
    assert adapter_output_length(9, TOY) == 2  # 9 -> 5 -> 3 -> 2


def test_length_law_factor_of_eight():
    for t in range(8, 513, 8):
        assert adapter_output_length(t, TOY) == t // 8


def test_length_law_random_inputs_match_independent_formula(rng):
    for _ in range(100):
        t = int(rng.integers(8, 513))
        assert adapter_output_length(t, TOY) == expected_length(t, TOY)


def test_length_law_rejects_collapsed_input():
    config = AdapterConfig(out_dim=4, kernel=9, padding=0, n_conv_layers=1)
    with pytest.raises(ValueError, match="too short"):
        adapter_output_length(3, config)


def test_concat_order_and_identity(rng):
    raw = EmbeddingSequence(frames=rng.standard_normal((2, 3)))
    emo = EmbeddingSequence(frames=rng.standard_normal((2, 2)))
    joined = concat_embeddings(raw, emo)
    assert joined.array.shape == (2, 5)
    np.testing.assert_array_equal(joined.array[0], np.concatenate([raw.array[0], emo.array[0]]))
    # width-zero emotion stream: ablation path is bit-exactly the raw path
    same = concat_embeddings(raw, empty_emotion_stream(2))
    assert same.array is raw.array


def test_concat_length_mismatch_mentions_resample(rng):
    raw = EmbeddingSequence(frames=rng.standard_normal((3, 3)))
    emo = EmbeddingSequence(frames=rng.standard_normal((4, 2)))
    with pytest.raises(ValueError, match="resample_frames"):
        concat_embeddings(raw, emo)


def test_adapt_output_geometry(rng):
    params = init_adapter_params(TOY, in_dim=5, seed=0)
    for t in (8, 17, 40, 64):
        seq = EmbeddingSequence(frames=rng.standard_normal((t, 5)))
        fused = adapt(seq, params, TOY)
        assert fused.length == adapter_output_length(t, TOY)
        assert fused.width == TOY.out_dim


def test_adapt_rejects_short_and_wrong_width(rng):
    params = init_adapter_params(TOY, in_dim=5, seed=0)
    with pytest.raises(ValueError, match="too short"):
        adapt(EmbeddingSequence(frames=rng.standard_normal((7, 5))), params, TOY)
    with pytest.raises(ValueError, match="width"):
        adapt(EmbeddingSequence(frames=rng.standard_normal((16, 4))), params, TOY)


def test_adapt_zero_input_is_finite_and_zero_before_offsets():
    params = init_adapter_params(TOY, in_dim=5, seed=0)
    seq = EmbeddingSequence(frames=np.zeros((16, 5)))
    fused = adapt(seq, params, TOY)
    assert np.isfinite(fused.array).all()
    # biases init to zero, tanh(0)=0: the whole stack maps zero to zero
    np.testing.assert_allclose(fused.array, 0.0)


def test_adapt_gradients_match_fd(rng):
    params = init_adapter_params(TOY, in_dim=4, seed=1)
    seq_value = rng.standard_normal((10, 4))
    readout = rng.standard_normal((adapter_output_length(10, TOY), TOY.out_dim))

    def fn():
        fused = adapt(EmbeddingSequence(frames=seq_value), params, TOY)
        return ad.tensor_sum(fused.frames * readout)

    check_gradients(fn, params, tol=1e-4)


def test_width_independence_of_output(rng):
    for emo_dim in (0, 2, 7):
        in_dim = 4 + emo_dim
        params = init_adapter_params(TOY, in_dim=in_dim, seed=0)
        seq = EmbeddingSequence(frames=rng.standard_normal((12, in_dim)))
        assert adapt(seq, params, TOY).width == TOY.out_dim

"""Auxiliary emotion heads: mean pooling, 4-way classifier, 3-way regressor.

Heads are single affine layers over the pooled fused embedding. They exist
only for training-time supervision; response generation never touches them.
Class order everywhere is (neutral, happy, angry, sad).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .adapter import FusedEmbeddingSequence
from .manifest import EMOTION_CATEGORIES

N_CLASSES = len(EMOTION_CATEGORIES)
N_DIMS = 3


@dataclass
class PooledEmbedding:
    vector: ad.Tensor  # shape (M,)

    def __post_init__(self):
        if not isinstance(self.vector, ad.Tensor):
            self.vector = ad.Tensor(self.vector)
        if self.vector.value.ndim != 1:
            raise ValueError("pooled embedding must be 1-D")
        if not np.isfinite(self.vector.value).all():
            raise ValueError("pooled embedding contains non-finite values")

    @property
    def width(self) -> int:
        return self.vector.value.shape[0]


@dataclass(frozen=True)
class EmotionPrediction:
    """Detached per-utterance prediction: class distribution plus VAD triple."""

    cat_probs: np.ndarray
    vad_pred: np.ndarray

    def __post_init__(self):
        if self.cat_probs.shape != (N_CLASSES,) or abs(float(self.cat_probs.sum()) - 1.0) > 1e-6:
            raise ValueError("cat_probs must be a 4-way distribution")
        if self.vad_pred.shape != (N_DIMS,) or ((self.vad_pred < 0) | (self.vad_pred > 1)).any():
            raise ValueError("vad_pred must be 3 values in [0, 1]")

    @property
    def top_class(self) -> str:
        return EMOTION_CATEGORIES[int(np.argmax(self.cat_probs))]


def init_head_params(model_dim: int, seed: int) -> dict[str, ad.Tensor]:
    rng = np.random.default_rng(seed)
    return {
        "cat.w": ad.parameter(None, rng=rng, fan_in=model_dim, shape=(model_dim, N_CLASSES)),
        "cat.b": ad.parameter(np.zeros(N_CLASSES)),
        "dim.w": ad.parameter(None, rng=rng, fan_in=model_dim, shape=(model_dim, N_DIMS)),
        "dim.b": ad.parameter(np.zeros(N_DIMS)),
    }


def mean_pool(fused: FusedEmbeddingSequence) -> PooledEmbedding:
    """Arithmetic mean over time of each channel."""
    if fused.length < 1:
        raise ValueError("cannot pool an empty sequence")
    return PooledEmbedding(vector=ad.tensor_mean(fused.frames, axis=0))


def classify_categorical(pooled: PooledEmbedding, params: dict[str, ad.Tensor]) -> ad.Tensor:
    """Softmax distribution over the four emotion classes, shape (4,)."""
    if not np.isfinite(pooled.vector.value).all():
        raise ValueError("NaN in pooled embedding")
    row = ad.reshape(pooled.vector, (1, pooled.width))
    logits = row @ params["cat.w"] + params["cat.b"]
    return ad.reshape(ad.softmax(logits, axis=-1), (N_CLASSES,))


def regress_dimensional(pooled: PooledEmbedding, params: dict[str, ad.Tensor]) -> ad.Tensor:
    """Affine map squashed to [0, 1]^3, shape (3,)."""
    if not np.isfinite(pooled.vector.value).all():
        raise ValueError("NaN in pooled embedding")
    row = ad.reshape(pooled.vector, (1, pooled.width))
    return ad.reshape(ad.sigmoid(row @ params["dim.w"] + params["dim.b"]), (N_DIMS,))


def ce_loss(pred: ad.Tensor, target: int) -> ad.Tensor:
    """-log pred[target] for one sample; callers average over the batch."""
    if not (0 <= target < N_CLASSES):
        raise ValueError(f"target class index {target} outside 0..{N_CLASSES - 1}")
    return -ad.log(pred[target])


def mse_loss(pred: ad.Tensor, target) -> ad.Tensor:
    """Squared error averaged over the 3 dimensions for one sample."""
    target_arr = np.asarray(target, dtype=np.float64)
    if target_arr.shape != (N_DIMS,):
        raise ValueError(f"target must have {N_DIMS} components")
    diff = pred - ad.Tensor(target_arr)
    return ad.tensor_mean(diff * diff)


def predict_emotion(pooled: PooledEmbedding, params: dict[str, ad.Tensor]) -> EmotionPrediction:
    """Detached convenience wrapper used by head-based recognition scoring."""
    return EmotionPrediction(
        cat_probs=classify_categorical(pooled, params).value.copy(),
        vad_pred=regress_dimensional(pooled, params).value.copy(),
    )


def class_index(emotion: str) -> int:
    if emotion not in EMOTION_CATEGORIES:
        raise ValueError(f"unknown emotion {emotion!r}")
    return EMOTION_CATEGORIES.index(emotion)

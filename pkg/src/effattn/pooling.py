"""Attention pooling and the 8-way classifier head.

The pooling query scores each hidden state, ``s_i = h_i . q / sqrt(D)``,
and the utterance vector is the softmax-weighted sum of the rows. The
classifier is LayerNorm -> Linear -> GELU -> Linear (dropout is the
identity at inference).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core_math import ContractError, Rng, gaussian_init, gelu, layer_norm, stable_softmax

NUM_CLASSES = 8


@dataclass(frozen=True, eq=False)
class PoolingParams:
    query: np.ndarray


@dataclass(frozen=True, eq=False)
class ClassifierParams:
    ln_gain: np.ndarray
    ln_bias: np.ndarray
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    @property
    def num_classes(self) -> int:
        return self.w2.shape[0]


def head_param_count(model_dim: int, num_classes: int = NUM_CLASSES) -> int:
    """Pooling query plus classifier scalars for hidden width ``model_dim``."""
    D = model_dim
    return D + 2 * D + D * D + D + num_classes * D + num_classes


def init_pooling(rng: Rng, model_dim: int) -> PoolingParams:
    return PoolingParams(query=gaussian_init(rng.child("query"), 1, model_dim, model_dim ** -0.5)[0])


def init_classifier(rng: Rng, model_dim: int, num_classes: int = NUM_CLASSES) -> ClassifierParams:
    D = model_dim
    return ClassifierParams(
        ln_gain=np.ones(D),
        ln_bias=np.zeros(D),
        w1=gaussian_init(rng.child("w1"), D, D, D ** -0.5),
        b1=np.zeros(D),
        w2=gaussian_init(rng.child("w2"), num_classes, D, D ** -0.5),
        b2=np.zeros(num_classes),
    )


def pooling_weights(H, params: PoolingParams) -> np.ndarray:
    H = np.asarray(H, dtype=np.float64)
    if H.ndim != 2 or H.shape[0] < 1:
        raise ContractError("attention_pool needs an (L, D) input with L >= 1")
    if params.query.shape != (H.shape[1],):
        raise ContractError(f"pooling query has shape {params.query.shape}, expected ({H.shape[1]},)")
    scores = H @ params.query / np.sqrt(H.shape[1])
    return stable_softmax(scores)


def attention_pool(H, params: PoolingParams, return_weights: bool = False):
    weights = pooling_weights(H, params)
    c = weights @ np.asarray(H, dtype=np.float64)
    return (c, weights) if return_weights else c


def classifier_forward(c, params: ClassifierParams) -> np.ndarray:
    c = np.asarray(c, dtype=np.float64)
    if not np.isfinite(c).all():
        raise ContractError("classifier input contains non-finite entries")
    hidden = params.w1 @ layer_norm(c, params.ln_gain, params.ln_bias) + params.b1
    return params.w2 @ gelu(hidden) + params.b2


def predict(logits) -> int:
    """1-based argmax; ties resolve to the lowest index."""
    logits = np.asarray(logits, dtype=np.float64)
    if not np.isfinite(logits).all():
        raise ContractError("logits must be finite")
    return int(np.argmax(logits)) + 1

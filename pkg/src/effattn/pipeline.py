"""End-to-end forward model on synthetic encoder features.

Stand-in "speech" (M x D) and "text" (N x D) feature sequences are
concatenated row-wise, contextualized by one seq2seq mechanism, pooled to a
single vector and classified into 8 classes.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from . import mechanisms as mech
from .core_math import ContractError, Rng, as_sequence
from .mechanisms import ExecutionMode, MechanismConfig, MechanismKind, MechanismParams
from .pooling import (ClassifierParams, PoolingParams, attention_pool, classifier_forward,
                      init_classifier, init_pooling, predict)

FRAMES_PER_SECOND = 50


def synth_features(rng: Rng, length: int, model_dim: int, mean=0.0, std=1.0) -> np.ndarray:
    """Gaussian (length, model_dim) features; ``mean``/``std`` may be per-dimension."""
    if length < 1:
        raise ContractError("feature sequences need at least one row")
    std = np.broadcast_to(np.asarray(std, dtype=np.float64), (model_dim,))
    if (std < 0).any():
        raise ContractError("feature std must be nonnegative")
    return rng.normal((length, model_dim), std=std, mean=np.broadcast_to(mean, (model_dim,)))


@dataclass(frozen=True)
class SyntheticCorpusSpec:
    num_samples: int
    speech_len: tuple[int, int] = (100, 400)
    text_len: tuple[int, int] = (10, 40)
    mean: float | np.ndarray = 0.0
    std: float | np.ndarray = 1.0

    def __post_init__(self):
        if self.num_samples < 0:
            raise ContractError("num_samples must be nonnegative")
        if not 1 <= self.speech_len[0] <= self.speech_len[1]:
            raise ContractError("speech lengths must satisfy 1 <= min <= max")
        if not 0 <= self.text_len[0] <= self.text_len[1]:
            raise ContractError("text lengths must satisfy 0 <= min <= max")
        if np.any(np.asarray(self.std) <= 0):
            raise ContractError("corpus feature std must be positive")


def synth_corpus(spec: SyntheticCorpusSpec, model_dim: int, rng: Rng) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Yield ``(S, E)`` pairs with lengths drawn uniformly from the configured ranges."""
    for i in range(spec.num_samples):
        sample = rng.child(f"sample{i}")
        M = sample.integers(spec.speech_len[0], spec.speech_len[1] + 1)
        N = sample.integers(spec.text_len[0], spec.text_len[1] + 1)
        S = synth_features(sample.child("speech"), M, model_dim, spec.mean, spec.std)
        E = (synth_features(sample.child("text"), N, model_dim, spec.mean, spec.std) if N
             else np.empty((0, model_dim)))
        yield S, E


def concat_modalities(S, E) -> np.ndarray:
    S = np.asarray(S, dtype=np.float64)
    E = np.asarray(E, dtype=np.float64)
    if S.ndim != 2 or S.shape[0] < 1:
        raise ContractError("speech features must be (M, D) with M >= 1")
    if E.size == 0:
        E = E.reshape(0, S.shape[1])
    if E.ndim != 2 or E.shape[1] != S.shape[1]:
        raise ContractError(f"modality widths differ: {S.shape} vs {E.shape}")
    return np.concatenate([S, E], axis=0)


def split_modalities(U, speech_len: int) -> tuple[np.ndarray, np.ndarray]:
    return U[:speech_len], U[speech_len:]


@dataclass(frozen=True)
class PipelineConfig:
    speech_len: int = 200
    text_len: int = 30
    model_dim: int = 256
    mechanism: MechanismKind = MechanismKind.SA
    mechanism_config: MechanismConfig | None = None
    mode: ExecutionMode | None = None
    seed: int = 0

    def __post_init__(self):
        if self.speech_len < 1 or self.text_len < 0:
            raise ContractError("need speech_len >= 1 and text_len >= 0")
        object.__setattr__(self, "mechanism", MechanismKind.parse(self.mechanism))
        if self.mechanism_config is None:
            object.__setattr__(self, "mechanism_config", MechanismConfig(model_dim=self.model_dim, seed=self.seed))
        elif self.mechanism_config.model_dim != self.model_dim:
            raise ContractError("mechanism_config.model_dim must equal model_dim")
        object.__setattr__(self, "mode", mech.check_mode(self.mechanism, self.mode))

    @property
    def seq_len(self) -> int:
        return self.speech_len + self.text_len


@dataclass(frozen=True, eq=False)
class ModelParams:
    mechanism: MechanismParams
    pooling: PoolingParams
    classifier: ClassifierParams


def init_model(config: PipelineConfig) -> ModelParams:
    rng = Rng(config.seed).child("head")
    return ModelParams(
        mechanism=mech.init_params(config.mechanism, config.mechanism_config),
        pooling=init_pooling(rng.child("pooling"), config.model_dim),
        classifier=init_classifier(rng.child("classifier"), config.model_dim),
    )


def model_forward(S, E, config: PipelineConfig, params: ModelParams) -> tuple[np.ndarray, int]:
    U = concat_modalities(S, E)
    H = mech.forward(config.mechanism, U, params.mechanism, config.mode)
    logits = classifier_forward(attention_pool(H, params.pooling), params.classifier)
    return logits, predict(logits)


def streaming_forward(S, E, config: PipelineConfig, params: ModelParams) -> tuple[np.ndarray, int]:
    """Token-by-token evaluation through the mechanism's recurrent state."""
    U = as_sequence(concat_modalities(S, E), "U")
    H, _ = mech.fold(config.mechanism, U, params.mechanism)
    logits = classifier_forward(attention_pool(H, params.pooling), params.classifier)
    return logits, predict(logits)


def length_adjust(seq, target_len: int, rng: Rng) -> np.ndarray:
    """Crop a random contiguous window when too long, repeat cyclically when too short."""
    seq = np.asarray(seq, dtype=np.float64)
    n = seq.shape[0]
    if target_len < 1 or n < 1:
        raise ContractError("length_adjust needs target_len >= 1 and a non-empty sequence")
    if n == target_len:
        return seq.copy()
    if n > target_len:
        start = rng.integers(0, n - target_len + 1)
        return seq[start:start + target_len].copy()
    return seq[np.arange(target_len) % n]


def seconds_to_frames(seconds: float) -> int:
    return int(round(seconds * FRAMES_PER_SECOND))


# plain-text "key = value" configuration shared by the CLI


def _int_list(text: str) -> list[int]:
    return [int(x) for x in text.replace(" ", "").split(",") if x]


def _str_list(text: str) -> list[str]:
    return [x.strip() for x in text.split(",") if x.strip()]


def _optional_int(text: str) -> int | None:
    return None if text.lower() in ("", "none") else int(text)


CONFIG_SCHEMA = {
    "mechanism": str,
    "mechanisms": _str_list,
    "mode": str,
    "dim": int,
    "heads": int,
    "slots": int,
    "gate_rank": _optional_int,
    "seed": int,
    "speech_len": int,
    "text_len": int,
    "lengths": _int_list,
    "repeats": int,
    "warmup": int,
    "max_length_cap": _optional_int,
    "out": str,
}


def parse_config_text(text: str, source: str = "<string>") -> dict:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ContractError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in CONFIG_SCHEMA:
            raise ContractError(f"{source}:{lineno}: unknown key {key!r}")
        try:
            values[key] = CONFIG_SCHEMA[key](value)
        except ValueError as exc:
            raise ContractError(f"{source}:{lineno}: bad value for {key}: {exc}") from None
    return values


def load_config(path) -> dict:
    path = Path(path)
    return parse_config_text(path.read_text(), str(path))

"""Deterministic numeric substrate shared by every other module.

Sequence tensors are plain ``float64`` numpy arrays of shape ``(L, D)``;
:func:`as_sequence` is the boundary check used wherever one is accepted.
"""

from __future__ import annotations

import hashlib

import numpy as np
from scipy.special import erf, expit

__all__ = [
    "ContractError",
    "Rng",
    "as_sequence",
    "gaussian_init",
    "gelu",
    "layer_norm",
    "logistic",
    "matmul",
    "stable_softmax",
]

LN_EPS = 1e-5


class ContractError(ValueError):
    """Raised when an operation's precondition is violated."""


def as_sequence(x, name: str = "sequence") -> np.ndarray:
    """Return ``x`` as a finite, C-contiguous ``(L, D)`` float64 array."""
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise ContractError(f"{name} must be 2-D (L x D), got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise ContractError(f"{name} contains non-finite entries")
    return arr


class Rng:
    """Seeded PCG64 generator with named, order-independent child streams.

    ``Rng(seed).child("w_q")`` always yields the same stream regardless of
    which other children were drawn before it, so adding a parameter tensor
    never shifts the values of existing ones.
    """

    def __init__(self, seed: int, _path: tuple[int, ...] = ()):
        self.seed = int(seed)
        self._path = _path
        entropy = [self.seed & 0xFFFFFFFFFFFFFFFF, *_path]
        self.generator = np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))

    def child(self, name: str) -> "Rng":
        digest = hashlib.blake2b(name.encode(), digest_size=8).digest()
        return Rng(self.seed, self._path + (int.from_bytes(digest, "little"),))

    def normal(self, size, std: float = 1.0, mean=0.0) -> np.ndarray:
        return self.generator.normal(loc=mean, scale=std, size=size)

    def integers(self, low: int, high: int) -> int:
        return int(self.generator.integers(low, high))

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, depth={len(self._path)})"


def stable_softmax(x, axis: int = -1, out: np.ndarray | None = None) -> np.ndarray:
    """Max-subtracted softmax along ``axis``.

    ``-inf`` entries are treated as masked and receive weight exactly 0, but
    every slice needs at least one finite entry. NaN and ``+inf`` are
    rejected. Pass ``out=x`` to normalize a float64 buffer in place.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0 or x.shape[axis] == 0:
        raise ContractError("stable_softmax needs at least one element")
    # max propagates NaN, so checking the row maxima covers every entry
    top = np.max(x, axis=axis, keepdims=True)
    if np.isnan(top).any():
        raise ContractError("stable_softmax input contains NaN")
    if np.isposinf(top).any():
        raise ContractError("stable_softmax input contains +inf")
    if np.isneginf(top).any():
        raise ContractError("stable_softmax slice is fully masked")
    out = np.subtract(x, top, out=out)
    np.exp(out, out=out)
    total = np.sum(out, axis=axis, keepdims=True)
    out /= total
    return out


def logistic(x):
    """Overflow-free logistic function; maps ``-inf`` to 0 and ``+inf`` to 1."""
    return expit(np.asarray(x, dtype=np.float64))


def gelu(x):
    """Exact GELU, ``x * Phi(x)`` with the Gaussian CDF written via erf."""
    x = np.asarray(x, dtype=np.float64)
    return 0.5 * x * (1.0 + erf(x / np.sqrt(2.0)))


def layer_norm(x, gain, bias, eps: float = LN_EPS) -> np.ndarray:
    """Normalize the last axis with population variance, then scale and shift."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] < 2:
        raise ContractError("layer_norm needs at least 2 features")
    if eps < 0:
        raise ContractError("layer_norm eps must be nonnegative")
    mean = x.mean(axis=-1, keepdims=True)
    centered = x - mean
    var = np.mean(centered * centered, axis=-1, keepdims=True)
    denom = np.sqrt(var + eps)
    # eps=0 on a constant vector: 0/0, collapse to the bias
    normed = np.divide(centered, denom, out=np.zeros_like(centered), where=denom > 0)
    return np.asarray(gain) * normed + np.asarray(bias)


def matmul(a, b) -> np.ndarray:
    """Dense product with shape checking.

    Delegates to numpy's BLAS-backed ``@``, which is deterministic for fixed
    inputs and thread count.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ContractError(f"matmul expects matrices, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ContractError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    return a @ b


def gaussian_init(rng: Rng, rows: int, cols: int, std: float) -> np.ndarray:
    if std <= 0:
        raise ContractError("gaussian_init std must be positive")
    if rows < 0 or cols < 0:
        raise ContractError("gaussian_init shape must be nonnegative")
    return rng.normal((rows, cols), std=std)

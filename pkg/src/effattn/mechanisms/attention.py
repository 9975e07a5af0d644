"""Unbounded-memory mechanisms: causal softmax attention and FoX.

Both materialize the full L x L score matrix of each head; heads run one
after another so only one score matrix is alive at a time.
"""

from __future__ import annotations

import numpy as np

from ..accounting import NULL
from ..core_math import as_sequence, logistic, stable_softmax
from ._base import MechanismKind, MechanismParams, check_mode, multihead_apply

# rows per masking chunk are sized so each boolean mask stays near 1M entries
_MASK_BUDGET = 1 << 20


def _row_chunks(L: int):
    step = max(1, _MASK_BUDGET // max(L, 1))
    for i0 in range(0, L, step):
        yield i0, min(L, i0 + step)


def _apply_causal_mask(scores: np.ndarray, accountant=NULL) -> None:
    # row slices write in place, so masking needs no scratch
    for i in range(scores.shape[0] - 1):
        scores[i, i + 1:] = -np.inf


def causal_softmax_attention(q, k, v, bias_fn=None, accountant=NULL) -> np.ndarray:
    """softmax(q k^T / sqrt(d) + bias + causal mask) v for one head.

    ``bias_fn(scores)`` may add a lower-triangular bias in place before the
    mask is applied.
    """
    d = q.shape[1]
    scores = accountant.track(q @ k.T)
    scores *= 1.0 / np.sqrt(d)
    if bias_fn is not None:
        bias_fn(scores)
    _apply_causal_mask(scores, accountant)
    stable_softmax(scores, axis=-1, out=scores)
    out = accountant.track(scores @ v)
    accountant.release(scores)
    return out


def sa_forward(U, params: MechanismParams, mode=None, accountant=NULL, diagnostics=None) -> np.ndarray:
    check_mode(MechanismKind.SA, mode)
    U = as_sequence(U, "U")

    def head(h, q, k, v):
        return causal_softmax_attention(q, k, v, accountant=accountant)

    return multihead_apply(U, params, head, accountant)


def forget_gates(U: np.ndarray, params: MechanismParams) -> np.ndarray:
    """Per-token, per-head forget gates f in [0, 1], shape (L, H)."""
    return logistic(U @ params.forget_w.T + params.forget_b)


def forget_bias_adder(f: np.ndarray, accountant=NULL):
    """Return an in-place adder of sum_{l=j+1..i} log f_l to scores[i, j].

    Gates that are exactly zero contribute -inf; they are tracked as a
    segment count rather than through the prefix sum so no inf - inf
    arises.
    """
    closed = f <= 0.0
    logs = np.log(np.where(closed, 1.0, f))
    prefix = np.cumsum(logs)
    segment = np.cumsum(closed)

    def add(scores: np.ndarray) -> None:
        scores += prefix[:, None]
        scores -= prefix[None, :]
        if segment[-1] == 0:
            return
        for i0, i1 in _row_chunks(scores.shape[0]):
            cut = segment[i0:i1, None] != segment[None, :]
            accountant.transient(cut.nbytes)
            np.putmask(scores[i0:i1], cut, -np.inf)

    return add


def fox_forward(U, params: MechanismParams, mode=None, accountant=NULL, diagnostics=None) -> np.ndarray:
    check_mode(MechanismKind.FOX, mode)
    U = as_sequence(U, "U")
    f = forget_gates(U, params)

    def head(h, q, k, v):
        return causal_softmax_attention(q, k, v, bias_fn=forget_bias_adder(f[:, h], accountant),
                                        accountant=accountant)

    return multihead_apply(U, params, head, accountant)

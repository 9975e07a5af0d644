"""Retention: exponentially decayed key-value memory.

Recurrent form per head: S_t = gamma S_{t-1} + k_t v_t^T, o_t = q_t S_t.
Parallel form: O = ((Q K^T) * Dmat) V with Dmat[n, m] = gamma^(n-m), n >= m.
"""

from __future__ import annotations

import numpy as np

from ..accounting import NULL
from ..core_math import ContractError, as_sequence
from ._base import (ExecutionMode, MechanismKind, MechanismParams, RecurrentState, check_mode,
                    fresh_state, multihead_apply)
from ._kernels import retention_update
from .attention import _row_chunks


def _check_gamma(gamma: np.ndarray) -> None:
    if not np.all((gamma > 0.0) & (gamma < 1.0)):
        raise ContractError(f"retention decay must lie in (0, 1), got {gamma}")


def apply_decay_mask(scores: np.ndarray, gamma: float, accountant=NULL) -> None:
    """Multiply scores[n, m] by gamma^(n-m) below the diagonal, zero above."""
    L = scores.shape[0]
    log_gamma = np.log(gamma)
    cols = np.arange(L)
    for i0, i1 in _row_chunks(L):
        lag = np.arange(i0, i1)[:, None] - cols[None, :]
        decay = np.exp(np.maximum(lag, 0) * log_gamma)
        decay[lag < 0] = 0.0
        accountant.transient(lag.nbytes + decay.nbytes)
        scores[i0:i1] *= decay


def retnet_parallel(U, params: MechanismParams, accountant=NULL) -> np.ndarray:
    gamma = params.gamma

    def head(h, q, k, v):
        scores = accountant.track(q @ k.T)
        apply_decay_mask(scores, gamma[h], accountant)
        out = accountant.track(scores @ v)
        accountant.release(scores)
        return out

    return multihead_apply(U, params, head, accountant)


def retnet_step(state: RecurrentState, u: np.ndarray, params: MechanismParams, accountant=NULL):
    q, k, v, _ = params.project_token(u)
    matrix, o = retention_update(state.matrix, params.gamma, q, k, v)
    accountant.track(matrix)
    accountant.transient(4 * o.nbytes)
    accountant.release(state.matrix)
    return RecurrentState(state.kind, state.t + 1, matrix=matrix), params.w_o @ o.reshape(-1)


def retnet_recurrent(U, params: MechanismParams, accountant=NULL) -> np.ndarray:
    state = fresh_state(MechanismKind.RETNET, params.config)
    accountant.track(state.matrix)
    out = np.empty_like(U)
    for t in range(U.shape[0]):
        state, out[t] = retnet_step(state, U[t], params, accountant)
    accountant.release(state.matrix)
    return out


def retnet_forward(U, params: MechanismParams, mode=None, accountant=NULL, diagnostics=None) -> np.ndarray:
    mode = check_mode(MechanismKind.RETNET, mode)
    U = as_sequence(U, "U")
    _check_gamma(params.gamma)
    if mode is ExecutionMode.PARALLEL:
        return retnet_parallel(U, params, accountant)
    return retnet_recurrent(U, params, accountant)

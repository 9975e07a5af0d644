"""Gated slot attention over a fixed bank of m key/value slots per head.

    alpha_t = logistic(W_alpha u_t + b_alpha)            in (0, 1)^m
    K_t = diag(alpha_t) K_{t-1} + (1 - alpha_t) k_t^T
    V_t = diag(alpha_t) V_{t-1} + (1 - alpha_t) v_t^T
    o_t = softmax(K_t q_t / sqrt(d)) V_t
"""

from __future__ import annotations

import numpy as np

from ..accounting import NULL
from ..core_math import as_sequence, stable_softmax
from ._base import MechanismKind, MechanismParams, RecurrentState, check_mode, finish_gates, fresh_state
from ._kernels import slot_update


def gsa_step(state: RecurrentState, u: np.ndarray, params: MechanismParams, accountant=NULL):
    q, k, v, first_stage = params.project_token(u)
    alpha = finish_gates(first_stage, params.gate_down, params.gate_up, params.gate_b)
    scale = 1.0 / np.sqrt(params.config.head_dim)
    slot_keys, slot_values, scores = slot_update(state.slot_keys, state.slot_values, alpha, k, v, q, scale)
    accountant.track(slot_keys)
    accountant.track(slot_values)
    weights = stable_softmax(scores, axis=-1)
    o = (weights[:, None, :] @ slot_values)[:, 0, :]
    accountant.transient(4 * o.nbytes + 3 * alpha.nbytes)
    accountant.release(state.slot_keys, state.slot_values)
    new = RecurrentState(state.kind, state.t + 1, slot_keys=slot_keys, slot_values=slot_values)
    return new, params.w_o @ o.reshape(-1)


def gsa_forward(U, params: MechanismParams, mode=None, accountant=NULL, diagnostics=None) -> np.ndarray:
    check_mode(MechanismKind.GSA, mode)
    U = as_sequence(U, "U")
    state = fresh_state(MechanismKind.GSA, params.config)
    for arr in state.arrays():
        accountant.track(arr)
    out = np.empty_like(U)
    for t in range(U.shape[0]):
        state, out[t] = gsa_step(state, U[t], params, accountant)
    accountant.release(*state.arrays())
    return out

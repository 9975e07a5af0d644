"""Delta-rule memory with per-dimension decay.

Per head, with a_t in (0, 1)^d, beta_t in (0, 1) and unit-norm key k~_t:

    S' = diag(a_t) S_{t-1}
    S_t = S' + beta_t k~_t (v_t - S'^T k~_t)^T
    o_t = S_t^T q_t

Keys with norm below ``MIN_KEY_NORM`` are used unnormalized.
"""

from __future__ import annotations

import numpy as np

from ..accounting import NULL
from ..core_math import as_sequence, logistic
from ._base import MechanismKind, MechanismParams, RecurrentState, check_mode, finish_gates, fresh_state
from ._kernels import delta_update

MIN_KEY_NORM = 1e-12


def normalize_keys(k: np.ndarray) -> np.ndarray:
    norm = np.sqrt(np.einsum("...i,...i->...", k, k))[..., None]
    return np.divide(k, norm, out=k.copy(), where=norm >= MIN_KEY_NORM)


def kda_step(state: RecurrentState, u: np.ndarray, params: MechanismParams, accountant=NULL):
    q, k, v, rest = params.project_token(u)
    H = params.config.num_heads
    decay = finish_gates(rest[:-H], params.decay_down, params.decay_up, params.decay_b)
    beta = logistic(rest[-H:] + params.beta_b)
    matrix, o = delta_update(state.matrix, decay, beta, normalize_keys(k), v, q)
    accountant.track(matrix)
    accountant.transient(6 * o.nbytes)
    accountant.release(state.matrix)
    return RecurrentState(state.kind, state.t + 1, matrix=matrix), params.w_o @ o.reshape(-1)


def kda_forward(U, params: MechanismParams, mode=None, accountant=NULL, diagnostics=None) -> np.ndarray:
    check_mode(MechanismKind.KDA, mode)
    U = as_sequence(U, "U")
    state = fresh_state(MechanismKind.KDA, params.config)
    accountant.track(state.matrix)
    out = np.empty_like(U)
    for t in range(U.shape[0]):
        state, out[t] = kda_step(state, U[t], params, accountant)
    accountant.release(state.matrix)
    return out

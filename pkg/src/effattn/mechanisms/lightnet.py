"""Normalized linear attention with exponential key features.

Per head, phi(k) = exp(k - c) where c is the running maximum key entry seen
so far (floored at 0, the fresh-state value). Because numerator and
denominator share the offset, rescaling the accumulators whenever c grows
leaves every output unchanged:

    S_t = S_{t-1} + phi(k_t) v_t^T,   z_t = z_{t-1} + phi(k_t),
    o_t = (q_t S_t) / (q_t . z_t)

Denominators smaller than ``EPS_DIV`` in magnitude are clamped to
``+-EPS_DIV`` and counted under ``diagnostics["lightnet_small_denominator"]``.
"""

from __future__ import annotations

import numpy as np

from ..accounting import NULL
from ..core_math import as_sequence
from ._kernels import normalized_update
from ._base import (ExecutionMode, MechanismKind, MechanismParams, RecurrentState, check_mode,
                    fresh_state, multihead_apply)

EPS_DIV = 1e-8
DIAG_KEY = "lightnet_small_denominator"


def _guard(den: np.ndarray, diagnostics) -> np.ndarray:
    small = np.abs(den) < EPS_DIV
    if small.any():
        if diagnostics is not None:
            diagnostics[DIAG_KEY] = diagnostics.get(DIAG_KEY, 0) + int(small.sum())
        den = np.where(small, np.where(den < 0, -EPS_DIV, EPS_DIV), den)
    return den


def lightnet_step(state: RecurrentState, u: np.ndarray, params: MechanismParams, accountant=NULL,
                  diagnostics=None):
    q, k, v, _ = params.project_token(u)
    offset = np.maximum(state.offset, k.max(axis=1))
    rescale = np.exp(state.offset - offset)
    phi = np.exp(k - offset[:, None])
    matrix, normalizer, num, den = normalized_update(state.matrix, state.normalizer, rescale, phi, q, v)
    for arr in (matrix, normalizer, offset):
        accountant.track(arr)
    o = num / _guard(den, diagnostics)[:, None]
    accountant.transient(6 * o.nbytes)
    accountant.release(state.matrix, state.normalizer, state.offset)
    new = RecurrentState(state.kind, state.t + 1, matrix=matrix, normalizer=normalizer, offset=offset)
    return new, params.w_o @ o.reshape(-1)


def lightnet_recurrent(U, params: MechanismParams, accountant=NULL, diagnostics=None) -> np.ndarray:
    state = fresh_state(MechanismKind.LIGHTNET, params.config)
    for arr in state.arrays():
        accountant.track(arr)
    out = np.empty_like(U)
    for t in range(U.shape[0]):
        state, out[t] = lightnet_step(state, U[t], params, accountant, diagnostics)
    accountant.release(*state.arrays())
    return out


def lightnet_parallel(U, params: MechanismParams, accountant=NULL, diagnostics=None) -> np.ndarray:
    """Same recurrence with all prefix sums materialized at once.

    Features use one offset per head (the global key maximum); each row is
    then rescaled to the running offset the recurrent form would hold.
    """

    def head(h, q, k, v):
        L, d = k.shape
        running = np.maximum(np.maximum.accumulate(k.max(axis=1)), 0.0)
        top = running[-1]
        phi = accountant.track(np.exp(k - top))
        prefix_kv = accountant.track(phi[:, :, None] * v[:, None, :])
        np.cumsum(prefix_kv, axis=0, out=prefix_kv)
        prefix_z = accountant.track(np.cumsum(phi, axis=0))
        rescale = np.exp(top - running)
        num = np.einsum("ti,tij->tj", q, prefix_kv) * rescale[:, None]
        den = _guard(np.einsum("ti,ti->t", q, prefix_z) * rescale, diagnostics)
        accountant.release(phi, prefix_kv, prefix_z)
        return num / den[:, None]

    return multihead_apply(U, params, head, accountant)


def lightnet_forward(U, params: MechanismParams, mode=None, accountant=NULL, diagnostics=None) -> np.ndarray:
    mode = check_mode(MechanismKind.LIGHTNET, mode)
    U = as_sequence(U, "U")
    if mode is ExecutionMode.PARALLEL:
        return lightnet_parallel(U, params, accountant, diagnostics)
    return lightnet_recurrent(U, params, accountant, diagnostics)

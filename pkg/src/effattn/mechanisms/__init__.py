"""Six causal seq2seq operators behind one ``forward`` interface.

Each maps an (L, D) sequence to an (L, D) sequence, multi-head, strictly
causal. Bounded-memory kinds (RetNet, LightNet, GSA, KDA) also stream one
token at a time through :func:`mechanism_step`.
"""

from __future__ import annotations

import numpy as np

from ..accounting import NULL
from ..core_math import ContractError
from ._base import (ALL_KINDS, BOUNDED, SUPPORTED_MODES, ExecutionMode, MechanismConfig, MechanismKind,
                    MechanismParams, RecurrentState, UnsupportedModeError, check_mode, default_mode,
                    fresh_state, gate_logits, gates, init_params, multihead_apply, param_count,
                    retnet_gammas)
from .attention import causal_softmax_attention, fox_forward, forget_gates, sa_forward
from .gsa import gsa_forward, gsa_step
from .kda import kda_forward, kda_step
from .lightnet import EPS_DIV, lightnet_forward, lightnet_step
from .retnet import retnet_forward, retnet_step

__all__ = [
    "ALL_KINDS", "BOUNDED", "EPS_DIV", "SUPPORTED_MODES", "ExecutionMode", "MechanismConfig",
    "MechanismKind", "MechanismParams", "RecurrentState", "UnsupportedModeError",
    "causal_softmax_attention", "check_mode", "default_mode", "fold", "forget_gates", "forward",
    "fox_forward", "fresh_state", "gate_logits", "gates", "gsa_forward", "init_params", "kda_forward",
    "lightnet_forward", "mechanism_step", "multihead_apply", "param_count", "retnet_forward",
    "retnet_gammas", "sa_forward",
]

_FORWARD = {
    MechanismKind.SA: sa_forward,
    MechanismKind.RETNET: retnet_forward,
    MechanismKind.LIGHTNET: lightnet_forward,
    MechanismKind.GSA: gsa_forward,
    MechanismKind.FOX: fox_forward,
    MechanismKind.KDA: kda_forward,
}


def forward(kind, U, params: MechanismParams, mode=None, accountant=NULL, diagnostics=None) -> np.ndarray:
    """Run mechanism ``kind`` over ``U``; ``mode=None`` picks its default mode."""
    kind = MechanismKind.parse(kind)
    if params.kind is not kind:
        raise ContractError(f"parameters were built for {params.kind.value}, not {kind.value}")
    mode = check_mode(kind, mode)
    if U is not None and np.shape(U)[0] < 1:
        raise ContractError("sequence must contain at least one position")
    return _FORWARD[kind](U, params, mode, accountant=accountant, diagnostics=diagnostics)


def mechanism_step(kind, state: RecurrentState, u_t, params: MechanismParams, accountant=NULL,
                   diagnostics=None):
    """Consume one token; returns ``(new_state, output_vector)``."""
    kind = MechanismKind.parse(kind)
    if kind not in BOUNDED:
        raise UnsupportedModeError(f"{kind.value} has unbounded memory and no streaming step")
    if state.kind is not kind or params.kind is not kind:
        raise ContractError("state, parameters and kind disagree")
    u_t = np.asarray(u_t, dtype=np.float64)
    if u_t.shape != (params.config.model_dim,):
        raise ContractError(f"token must have shape ({params.config.model_dim},), got {u_t.shape}")
    if kind is MechanismKind.RETNET:
        return retnet_step(state, u_t, params, accountant)
    if kind is MechanismKind.LIGHTNET:
        return lightnet_step(state, u_t, params, accountant, diagnostics)
    if kind is MechanismKind.GSA:
        return gsa_step(state, u_t, params, accountant)
    return kda_step(state, u_t, params, accountant)


def fold(kind, U, params: MechanismParams, state: RecurrentState | None = None):
    """Stream every row of ``U`` through :func:`mechanism_step`.

    Returns ``(outputs, final_state)``.
    """
    kind = MechanismKind.parse(kind)
    state = fresh_state(kind, params.config) if state is None else state
    U = np.asarray(U, dtype=np.float64)
    out = np.empty_like(U)
    for t in range(U.shape[0]):
        state, out[t] = mechanism_step(kind, state, U[t], params)
    return out, state

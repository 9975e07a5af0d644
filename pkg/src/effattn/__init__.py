"""Causal attention mechanisms with bounded and unbounded memory, a pooling
classifier pipeline, and a latency/memory benchmark."""

from .core_math import ContractError, Rng
from .mechanisms import (ALL_KINDS, BOUNDED, ExecutionMode, MechanismConfig, MechanismKind, RecurrentState,
                         UnsupportedModeError, fold, forward, init_params, mechanism_step, param_count)

__all__ = [
    "ALL_KINDS", "BOUNDED", "ContractError", "ExecutionMode", "MechanismConfig", "MechanismKind",
    "RecurrentState", "Rng", "UnsupportedModeError", "fold", "forward", "init_params", "mechanism_step",
    "param_count",
]
__version__ = "0.1.0"

from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from ..accounting import NULL
from ..core_math import ContractError, Rng, gaussian_init, logistic


class UnsupportedModeError(ContractError):
    """Execution mode (or streaming step) not available for a mechanism."""


class MechanismKind(str, enum.Enum):
    SA = "SA"
    RETNET = "RetNet"
    LIGHTNET = "LightNet"
    GSA = "GSA"
    FOX = "FoX"
    KDA = "KDA"

    @classmethod
    def parse(cls, name) -> "MechanismKind":
        if isinstance(name, cls):
            return name
        key = str(name).strip().lower()
        for kind in cls:
            if kind.value.lower() == key or kind.name.lower() == key:
                return kind
        raise ContractError(f"unknown mechanism {name!r}; choose from {', '.join(k.value for k in cls)}")

    @property
    def bounded(self) -> bool:
        return self in BOUNDED


class ExecutionMode(str, enum.Enum):
    PARALLEL = "parallel"
    RECURRENT = "recurrent"

    @classmethod
    def parse(cls, name) -> "ExecutionMode":
        if isinstance(name, cls):
            return name
        try:
            return cls(str(name).strip().lower())
        except ValueError:
            raise ContractError(f"unknown mode {name!r}; choose parallel or recurrent") from None


ALL_KINDS = tuple(MechanismKind)
BOUNDED = frozenset({MechanismKind.RETNET, MechanismKind.LIGHTNET, MechanismKind.GSA, MechanismKind.KDA})

SUPPORTED_MODES = {
    MechanismKind.SA: (ExecutionMode.PARALLEL,),
    MechanismKind.FOX: (ExecutionMode.PARALLEL,),
    MechanismKind.GSA: (ExecutionMode.RECURRENT,),
    MechanismKind.KDA: (ExecutionMode.RECURRENT,),
    MechanismKind.RETNET: (ExecutionMode.PARALLEL, ExecutionMode.RECURRENT),
    MechanismKind.LIGHTNET: (ExecutionMode.PARALLEL, ExecutionMode.RECURRENT),
}


def default_mode(kind: MechanismKind) -> ExecutionMode:
    """Recurrent for bounded-memory mechanisms, parallel otherwise."""
    kind = MechanismKind.parse(kind)
    return ExecutionMode.RECURRENT if kind in BOUNDED else ExecutionMode.PARALLEL


def check_mode(kind: MechanismKind, mode) -> ExecutionMode:
    kind = MechanismKind.parse(kind)
    mode = default_mode(kind) if mode is None else ExecutionMode.parse(mode)
    if mode not in SUPPORTED_MODES[kind]:
        allowed = ", ".join(m.value for m in SUPPORTED_MODES[kind])
        raise UnsupportedModeError(f"{kind.value} does not support {mode.value} mode (supported: {allowed})")
    return mode


@dataclass(frozen=True)
class MechanismConfig:
    """Shape and seed of one seq2seq operator.

    ``gate_rank`` is the inner width of the factorized gate projections used
    by GSA (slot gates) and KDA (per-dimension decay); ``None`` gives the
    full ``m x D`` / ``d x D`` per-head matrices instead.
    """

    model_dim: int = 256
    num_heads: int = 4
    slots: int = 64
    gate_rank: int | None = 16
    seed: int = 0

    def __post_init__(self):
        if self.model_dim < 1 or self.num_heads < 1:
            raise ContractError("model_dim and num_heads must be positive")
        if self.model_dim % self.num_heads:
            raise ContractError(f"model_dim {self.model_dim} not divisible by num_heads {self.num_heads}")
        if self.slots < 1:
            raise ContractError("slot count must be at least 1")
        if self.gate_rank is not None and self.gate_rank < 1:
            raise ContractError("gate_rank must be positive or None")

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.num_heads


@dataclass(frozen=True, eq=False)
class MechanismParams:
    """Frozen projection weights plus the per-mechanism extras.

    Shapes (H heads, head width d, model width D, m slots, r gate rank):
    ``w_q/w_k/w_v`` (H, d, D); ``w_o`` (D, H*d); RetNet ``gamma`` (H,);
    FoX ``forget_w`` (H, D), ``forget_b`` (H,); GSA ``gate_down`` (r, D),
    ``gate_up`` (H, m, r), ``gate_b`` (H, m); KDA ``decay_down`` (r, D),
    ``decay_up`` (H, d, r), ``decay_b`` (H, d), ``beta_w`` (H, D),
    ``beta_b`` (H,). With ``gate_rank=None`` the ``*_down`` factor is
    absent and ``*_up`` takes D columns.
    """

    kind: MechanismKind
    config: MechanismConfig
    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    w_o: np.ndarray
    gamma: np.ndarray | None = None
    forget_w: np.ndarray | None = None
    forget_b: np.ndarray | None = None
    gate_down: np.ndarray | None = None
    gate_up: np.ndarray | None = None
    gate_b: np.ndarray | None = None
    decay_down: np.ndarray | None = None
    decay_up: np.ndarray | None = None
    decay_b: np.ndarray | None = None
    beta_w: np.ndarray | None = None
    beta_b: np.ndarray | None = None

    @cached_property
    def token_matrix(self) -> np.ndarray:
        """Every per-token projection stacked into one matrix for streaming.

        Rows: q, k, v (H*d each), then the first stage of the mechanism's
        gates (GSA slot gates; KDA decay gates followed by the H strength
        rows).
        """
        D = self.config.model_dim
        rows = [self.w_q.reshape(-1, D), self.w_k.reshape(-1, D), self.w_v.reshape(-1, D)]
        if self.kind is MechanismKind.GSA:
            rows.append(self.gate_up.reshape(-1, D) if self.gate_down is None else self.gate_down)
        elif self.kind is MechanismKind.KDA:
            rows.append(self.decay_up.reshape(-1, D) if self.decay_down is None else self.decay_down)
            rows.append(self.beta_w)
        return np.ascontiguousarray(np.concatenate(rows))

    def project_token(self, u: np.ndarray):
        """Return ``(q, k, v, rest)`` for one token; q/k/v have shape (H, d)."""
        H, d = self.config.num_heads, self.config.head_dim
        p = self.token_matrix @ u
        n = 3 * H * d
        q, k, v = p[:n].reshape(3, H, d)
        return q, k, v, p[n:]

    def arrays(self) -> dict[str, np.ndarray]:
        names = ("w_q", "w_k", "w_v", "w_o", "gamma", "forget_w", "forget_b", "gate_down",
                 "gate_up", "gate_b", "decay_down", "decay_up", "decay_b", "beta_w", "beta_b")
        return {n: getattr(self, n) for n in names if getattr(self, n) is not None}


RETNET_DECAY_BASE = 5
FOX_FORGET_BIAS = 3.0
GSA_GATE_BIAS = 2.0
KDA_DECAY_BIAS = 3.0


def retnet_gammas(num_heads: int) -> np.ndarray:
    """Per-head decay schedule 1 - 2^(-5-h)."""
    return 1.0 - 2.0 ** (-RETNET_DECAY_BASE - np.arange(num_heads, dtype=np.float64))


def init_params(kind, config: MechanismConfig | None = None) -> MechanismParams:
    """Seeded parameters; every tensor draws from its own named child stream."""
    kind = MechanismKind.parse(kind)
    config = config or MechanismConfig()
    H, d, D, m, r = config.num_heads, config.head_dim, config.model_dim, config.slots, config.gate_rank
    rng = Rng(config.seed).child(kind.value)

    def gauss(name, shape, std):
        flat = gaussian_init(rng.child(name), int(np.prod(shape[:-1])), shape[-1], std)
        return flat.reshape(shape)

    proj_std = D ** -0.5
    extras: dict[str, np.ndarray] = {}
    if kind is MechanismKind.RETNET:
        extras["gamma"] = retnet_gammas(H)
    elif kind is MechanismKind.FOX:
        extras["forget_w"] = gauss("forget_w", (H, D), proj_std)
        extras["forget_b"] = np.full(H, FOX_FORGET_BIAS)
    elif kind is MechanismKind.GSA:
        if r is None:
            extras["gate_up"] = gauss("gate_up", (H, m, D), proj_std)
        else:
            extras["gate_down"] = gauss("gate_down", (r, D), proj_std)
            extras["gate_up"] = gauss("gate_up", (H, m, r), r ** -0.5)
        extras["gate_b"] = np.full((H, m), GSA_GATE_BIAS)
    elif kind is MechanismKind.KDA:
        if r is None:
            extras["decay_up"] = gauss("decay_up", (H, d, D), proj_std)
        else:
            extras["decay_down"] = gauss("decay_down", (r, D), proj_std)
            extras["decay_up"] = gauss("decay_up", (H, d, r), r ** -0.5)
        extras["decay_b"] = np.full((H, d), KDA_DECAY_BIAS)
        extras["beta_w"] = gauss("beta_w", (H, D), proj_std)
        extras["beta_b"] = np.zeros(H)

    return MechanismParams(
        kind=kind,
        config=config,
        w_q=gauss("w_q", (H, d, D), proj_std),
        w_k=gauss("w_k", (H, d, D), proj_std),
        w_v=gauss("w_v", (H, d, D), proj_std),
        w_o=gauss("w_o", (D, H * d), (H * d) ** -0.5),
        **extras,
    )


def _gate_shape_count(D: int, H: int, width: int, rank: int | None) -> int:
    # factorized gate: shared down-projection plus per-head up-projection
    if rank is None:
        return H * width * D
    return rank * D + H * width * rank


def param_count(kind, config: MechanismConfig | None = None, include_head: bool = False,
                num_classes: int = 8) -> int:
    """Exact scalar count of the mechanism's parameters, optionally with the
    attention-pooling query and classifier head added."""
    kind = MechanismKind.parse(kind)
    config = config or MechanismConfig()
    H, d, D, m, r = config.num_heads, config.head_dim, config.model_dim, config.slots, config.gate_rank
    total = 3 * H * d * D + D * H * d
    if kind is MechanismKind.RETNET:
        total += H
    elif kind is MechanismKind.FOX:
        total += H * (D + 1)
    elif kind is MechanismKind.GSA:
        total += _gate_shape_count(D, H, m, r) + H * m
    elif kind is MechanismKind.KDA:
        total += _gate_shape_count(D, H, d, r) + H * d + H * (D + 1)
    if include_head:
        from ..pooling import head_param_count

        total += head_param_count(D, num_classes)
    return total


@dataclass(frozen=True, eq=False)
class RecurrentState:
    """Fixed-size streaming memory for one bounded mechanism.

    RetNet/KDA use ``matrix`` (H, d, d); LightNet adds ``normalizer`` (H, d)
    and ``offset`` (H,), the running key maximum used to keep its
    exponential features in range; GSA uses ``slot_keys`` and
    ``slot_values`` (H, m, d). ``t`` counts consumed tokens.
    """

    kind: MechanismKind
    t: int = 0
    matrix: np.ndarray | None = None
    normalizer: np.ndarray | None = None
    offset: np.ndarray | None = None
    slot_keys: np.ndarray | None = None
    slot_values: np.ndarray | None = None

    def arrays(self) -> list[np.ndarray]:
        return [a for a in (self.matrix, self.normalizer, self.offset, self.slot_keys, self.slot_values)
                if a is not None]

    @property
    def num_scalars(self) -> int:
        return sum(a.size for a in self.arrays())

    @property
    def nbytes(self) -> int:
        return sum(a.nbytes for a in self.arrays())


def fresh_state(kind, config: MechanismConfig) -> RecurrentState:
    kind = MechanismKind.parse(kind)
    if kind not in BOUNDED:
        raise UnsupportedModeError(f"{kind.value} keeps no fixed-size state; streaming steps are unsupported")
    H, d, m = config.num_heads, config.head_dim, config.slots
    if kind is MechanismKind.GSA:
        return RecurrentState(kind, slot_keys=np.zeros((H, m, d)), slot_values=np.zeros((H, m, d)))
    if kind is MechanismKind.LIGHTNET:
        return RecurrentState(kind, matrix=np.zeros((H, d, d)), normalizer=np.zeros((H, d)), offset=np.zeros(H))
    return RecurrentState(kind, matrix=np.zeros((H, d, d)))


def gate_logits(u: np.ndarray, down: np.ndarray | None, up: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Affine gate pre-activations for a token (D,) or a sequence (L, D).

    Returns shape (..., H, width).
    """
    z = u if down is None else u @ down.T
    H, width, inner = up.shape
    out = z @ up.reshape(H * width, inner).T
    return out.reshape(*u.shape[:-1], H, width) + bias


def gates(u, down, up, bias) -> np.ndarray:
    return logistic(gate_logits(u, down, up, bias))


def finish_gates(first_stage: np.ndarray, down, up, bias) -> np.ndarray:
    """Gates for one token from its already projected first stage."""
    if down is None:
        return logistic(first_stage.reshape(bias.shape) + bias)
    H, width, rank = up.shape
    return logistic((up.reshape(H * width, rank) @ first_stage).reshape(H, width) + bias)


def multihead_apply(U: np.ndarray, params: MechanismParams, per_head_fn, accountant=NULL) -> np.ndarray:
    """Project ``U`` per head, run ``per_head_fn(h, q, k, v)`` and mix heads.

    ``per_head_fn`` returns the (L, d) head output. Heads are combined with
    ``W_o`` one column block at a time, which equals concatenating all heads
    and applying ``W_o`` once but never holds more than one head's
    projections alive.
    """
    cfg = params.config
    H, d, D = cfg.num_heads, cfg.head_dim, cfg.model_dim
    if U.shape[1] != D:
        raise ContractError(f"input width {U.shape[1]} does not match model_dim {D}")
    if params.w_o.shape != (D, H * d):
        raise ContractError(f"w_o has shape {params.w_o.shape}, expected {(D, H * d)}")
    out = np.zeros((U.shape[0], D))
    for h in range(H):
        q = accountant.track(U @ params.w_q[h].T)
        k = accountant.track(U @ params.w_k[h].T)
        v = accountant.track(U @ params.w_v[h].T)
        head = accountant.track(per_head_fn(h, q, k, v))
        accountant.release(q, k, v)
        mixed = accountant.track(head @ params.w_o[:, h * d:(h + 1) * d].T)
        out += mixed
        accountant.release(head, mixed)
    return out

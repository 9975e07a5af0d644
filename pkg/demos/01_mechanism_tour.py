"""
A tour of the six attention mechanisms
======================================

Each mechanism maps an (L, D) sequence to an (L, D) sequence causally.
Two of them keep a full score matrix; the other four fold the past into a
fixed-size state that can be stepped one token at a time.
"""

from dataclasses import replace

import numpy as np

from effattn import mechanisms as mech
from effattn.mechanisms import ALL_KINDS, BOUNDED, MechanismConfig

config = MechanismConfig(model_dim=64, num_heads=4, slots=16, seed=0)
U = np.random.default_rng(0).normal(size=(128, 64))

# every mechanism in its default mode, with the parameter budget it needs
for kind in ALL_KINDS:
    params = mech.init_params(kind, config)
    out = mech.forward(kind, U, params)
    print(f"{kind.value:9s} {mech.default_mode(kind).value:9s} params={mech.param_count(kind, config):6d} "
          f"|out|={np.linalg.norm(out):8.3f}")

# retention and normalized linear attention have two equivalent forms
for kind in ("retnet", "lightnet"):
    params = mech.init_params(kind, config)
    par = mech.forward(kind, U, params, "parallel")
    rec = mech.forward(kind, U, params, "recurrent")
    print(f"{kind}: parallel vs recurrent max difference {np.abs(par - rec).max():.2e}")

# bounded mechanisms stream: the state never grows, and resuming a fold
# from a saved state gives exactly the same outputs
for kind in BOUNDED:
    params = mech.init_params(kind, config)
    head, state = mech.fold(kind, U[:100], params)
    tail, state = mech.fold(kind, U[100:], params, state)
    same = np.array_equal(np.vstack([head, tail]), mech.forward(kind, U, params))
    print(f"{kind.value:9s} state scalars {state.num_scalars:5d} after {state.t} tokens, resumed fold exact: {same}")

# with its forget gates pinned open, forgetting attention is softmax attention
sa = mech.init_params("sa", config)
fox = mech.init_params("fox", config)
fox = replace(fox, w_q=sa.w_q, w_k=sa.w_k, w_v=sa.w_v, w_o=sa.w_o, forget_b=np.full(4, np.inf))
print("FoX with open gates equals SA:", np.array_equal(mech.forward("fox", U, fox), mech.forward("sa", U, sa)))

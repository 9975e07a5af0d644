"""
From fused features to an emotion class
=======================================

Speech frames and text tokens are concatenated along time, contextualized
by one mechanism, pooled into a single vector by a learned query, and
classified into eight emotions. Weights are untrained here; the point is
the data flow.
"""

import math

import numpy as np

from effattn.core_math import Rng
from effattn.mechanisms import MechanismConfig
from effattn.pipeline import (PipelineConfig, SyntheticCorpusSpec, init_model, length_adjust, model_forward,
                              streaming_forward, synth_corpus)
from effattn.pooling import PoolingParams, attention_pool

# the pooling step on a hand-sized input: scores (ln 3, 0) give weights 3:1
c, w = attention_pool(np.eye(2), PoolingParams(np.array([math.sqrt(2) * math.log(3), 0.0])), return_weights=True)
print("pooling weights", w, "pooled vector", c)

D = 64
rng = Rng(2024)
corpus = synth_corpus(SyntheticCorpusSpec(num_samples=4, speech_len=(80, 160), text_len=(5, 20)), D,
                      rng.child("corpus"))

for i, (S, E) in enumerate(corpus):
    # fixed-length speech windows: crop long clips, loop short ones
    S = length_adjust(S, 120, rng.child(f"crop{i}"))
    config = PipelineConfig(speech_len=len(S), text_len=len(E), model_dim=D, mechanism="kda",
                            mechanism_config=MechanismConfig(model_dim=D, num_heads=4, seed=7), seed=7)
    params = init_model(config)
    logits, label = model_forward(S, E, config, params)
    # the recurrent mechanism can also run token by token with identical results
    streamed, _ = streaming_forward(S, E, config, params)
    print(f"sample {i}: {len(S)} speech + {len(E)} text tokens -> class {label}, "
          f"streaming identical: {np.array_equal(logits, streamed)}")

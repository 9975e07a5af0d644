import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from effattn.core_math import ContractError, Rng
from effattn.pooling import (NUM_CLASSES, ClassifierParams, PoolingParams, attention_pool, classifier_forward,
                             init_classifier, init_pooling, predict)


def classifier_oracle(c, p):
    mu = math.fsum(c) / len(c)
    var = math.fsum((x - mu) ** 2 for x in c) / len(c)
    normed = [g * (x - mu) / math.sqrt(var + 1e-5) + b for x, g, b in zip(c, p.ln_gain, p.ln_bias)]
    hidden = [math.fsum(w * x for w, x in zip(row, normed)) + b for row, b in zip(p.w1, p.b1)]
    act = [h * 0.5 * (1 + math.erf(h / math.sqrt(2))) for h in hidden]
    return [math.fsum(w * a for w, a in zip(row, act)) + b for row, b in zip(p.w2, p.b2)]


class TestAttentionPool:
    def test_single_row(self):
        h = np.array([[1.5, -2.0, 3.0]])
        np.testing.assert_array_equal(attention_pool(h, PoolingParams(np.array([9.0, 1.0, -4.0]))), h[0])

    def test_zero_query_gives_mean(self):
        H = np.random.default_rng(0).normal(size=(11, 5))
        np.testing.assert_allclose(attention_pool(H, PoolingParams(np.zeros(5))), H.mean(axis=0), rtol=1e-13)

    def test_worked_example_is_exact(self):
        c, w = attention_pool(np.eye(2), PoolingParams(np.array([math.sqrt(2) * math.log(3), 0.0])),
                              return_weights=True)
        np.testing.assert_array_equal(w, [0.75, 0.25])
        np.testing.assert_array_equal(c, [0.75, 0.25])

    def test_query_shape_checked(self):
        with pytest.raises(ContractError):
            attention_pool(np.ones((3, 4)), PoolingParams(np.ones(3)))

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, st.tuples(st.integers(1, 30), st.integers(1, 6)), elements=st.floats(-100, 100)),
           st.integers(0, 2 ** 16))
    def test_convex_combination(self, H, seed):
        q = np.random.default_rng(seed).normal(size=H.shape[1]) * 3
        c, w = attention_pool(H, PoolingParams(q), return_weights=True)
        assert np.all(w >= 0) and abs(w.sum() - 1) <= 1e-12
        slack = 1e-12 * (1 + np.abs(H).max())
        assert np.all(H.min(axis=0) - slack <= c) and np.all(c <= H.max(axis=0) + slack)
        perm = np.random.default_rng(seed).permutation(H.shape[0])
        np.testing.assert_allclose(attention_pool(H[perm], PoolingParams(q)), c, atol=1e-12 * (1 + np.abs(H).max()))


class TestClassifier:
    def zero_params(self, D=4, b2=None):
        return ClassifierParams(np.zeros(D), np.zeros(D), np.zeros((D, D)), np.zeros(D), np.zeros((NUM_CLASSES, D)),
                                np.zeros(NUM_CLASSES) if b2 is None else np.asarray(b2, dtype=float))

    def test_zero_propagation(self):
        np.testing.assert_array_equal(classifier_forward(np.zeros(4), self.zero_params()), np.zeros(8))

    def test_bias_passthrough(self):
        logits = classifier_forward(np.random.default_rng(0).normal(size=4), self.zero_params(b2=np.arange(1, 9)))
        np.testing.assert_array_equal(logits, np.arange(1, 9))

    def test_matches_composed_oracle(self):
        rng = Rng(3)
        p = init_classifier(rng, 6)
        p = ClassifierParams(rng.child("g").normal(6), rng.child("b").normal(6), p.w1, rng.child("b1").normal(6),
                             p.w2, rng.child("b2").normal(8))
        c = rng.child("c").normal(6)
        np.testing.assert_allclose(classifier_forward(c, p), classifier_oracle(c, p), rtol=1e-12, atol=1e-12)

    def test_init_shapes(self):
        p = init_classifier(Rng(0), 5)
        assert p.w1.shape == (5, 5) and p.w2.shape == (8, 5) and p.num_classes == 8
        assert init_pooling(Rng(0), 5).query.shape == (5,)


class TestPredict:
    def test_last_class(self):
        assert predict([0, 0, 0, 0, 0, 0, 0, 1]) == 8

    def test_ties_pick_lowest(self):
        assert predict(np.full(8, 2.5)) == 1

    def test_argmax(self):
        assert predict([3, 1, 4, 1, 5, 9, 2, 6]) == 6

    def test_rejects_nan(self):
        with pytest.raises(ContractError):
            predict([0.0, np.nan])

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, 8, elements=st.floats(-50, 50)), st.floats(-1e3, 1e3), st.floats(1e-3, 1e3))
    def test_shift_and_scale_invariance(self, z, shift, scale):
        z = np.round(z, 3)  # keep distinct logits distinct after floating-point shifting
        if len(set(z.tolist())) < 8:
            return
        assert predict(z + shift) == predict(z) == predict(z * scale)

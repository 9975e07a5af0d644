"""Slow reference implementations written as explicit per-position loops.

They share no code with the package beyond reading parameter arrays, so
agreement with the vectorized forwards is meaningful.
"""

import math

import numpy as np


def _softmax(xs):
    top = max(xs)
    exps = [math.exp(x - top) if x != -math.inf else 0.0 for x in xs]
    total = math.fsum(exps)
    return [e / total for e in exps]


def _logistic(x):
    return 1.0 / (1.0 + np.exp(-x))


def _project(U, params, h):
    return U @ params.w_q[h].T, U @ params.w_k[h].T, U @ params.w_v[h].T


def _mix(params, head_outputs):
    return np.concatenate(head_outputs, axis=1) @ params.w_o.T


def softmax_attention(U, params, log_forget=None):
    """Per position: softmax over scaled scores of positions <= t, plus an optional
    cumulative log forget-gate bias sum_{l=j+1..t} log f_l."""
    L = U.shape[0]
    outs = []
    for h in range(params.config.num_heads):
        Q, K, V = _project(U, params, h)
        d = Q.shape[1]
        o = np.zeros_like(Q)
        for t in range(L):
            scores = []
            for j in range(t + 1):
                s = float(Q[t] @ K[j]) / math.sqrt(d)
                if log_forget is not None:
                    s += math.fsum(log_forget[l, h] for l in range(j + 1, t + 1))
                scores.append(s)
            w = _softmax(scores)
            o[t] = sum(w[j] * V[j] for j in range(t + 1))
        outs.append(o)
    return _mix(params, outs)


def fox(U, params):
    f = _logistic(U @ params.forget_w.T + params.forget_b)
    with np.errstate(divide="ignore"):
        return softmax_attention(U, params, np.log(f))


def retention(U, params):
    """o_t = sum_{s<=t} gamma^(t-s) (q_t . k_s) v_s"""
    L = U.shape[0]
    outs = []
    for h in range(params.config.num_heads):
        Q, K, V = _project(U, params, h)
        g = params.gamma[h]
        o = np.zeros_like(Q)
        for t in range(L):
            o[t] = sum(g ** (t - s) * float(Q[t] @ K[s]) * V[s] for s in range(t + 1))
        outs.append(o)
    return _mix(params, outs)


def normalized_linear(U, params):
    """Weighted average of values with weight_s proportional to q_t . exp(k_s)."""
    L = U.shape[0]
    outs = []
    for h in range(params.config.num_heads):
        Q, K, V = _project(U, params, h)
        phi = np.exp(K - K.max())  # a common offset cancels between numerator and denominator
        o = np.zeros_like(Q)
        for t in range(L):
            raw = [float(Q[t] @ phi[s]) for s in range(t + 1)]
            total = math.fsum(raw)
            o[t] = sum(raw[s] / total * V[s] for s in range(t + 1))
        outs.append(o)
    return _mix(params, outs)


def _gate(U, down, up, bias, h):
    hidden = U if down is None else U @ down.T
    return _logistic(hidden @ up[h].T + bias[h])


def slot_attention(U, params):
    L = U.shape[0]
    m, d = params.config.slots, params.config.head_dim
    outs = []
    for h in range(params.config.num_heads):
        Q, K, V = _project(U, params, h)
        alpha = _gate(U, params.gate_down, params.gate_up, params.gate_b, h)
        Ks, Vs = np.zeros((m, d)), np.zeros((m, d))
        o = np.zeros_like(Q)
        for t in range(L):
            for i in range(m):
                Ks[i] = alpha[t, i] * Ks[i] + (1 - alpha[t, i]) * K[t]
                Vs[i] = alpha[t, i] * Vs[i] + (1 - alpha[t, i]) * V[t]
            w = _softmax([float(Ks[i] @ Q[t]) / math.sqrt(d) for i in range(m)])
            o[t] = sum(w[i] * Vs[i] for i in range(m))
        outs.append(o)
    return _mix(params, outs)


def delta_rule(U, params, decay=True):
    """Gated delta rule; ``decay=False`` drops the per-dimension decay (a = 1)."""
    L = U.shape[0]
    d = params.config.head_dim
    outs = []
    for h in range(params.config.num_heads):
        Q, K, V = _project(U, params, h)
        a = _gate(U, params.decay_down, params.decay_up, params.decay_b, h) if decay else np.ones((L, d))
        beta = _logistic(U @ params.beta_w[h] + params.beta_b[h])
        S = np.zeros((d, d))
        o = np.zeros_like(Q)
        for t in range(L):
            norm = math.sqrt(float(K[t] @ K[t]))
            k = K[t] / norm if norm >= 1e-12 else K[t]
            S = a[t][:, None] * S
            S = S + beta[t] * np.outer(k, V[t] - S.T @ k)
            o[t] = S.T @ Q[t]
        outs.append(o)
    return _mix(params, outs)


ORACLES = {
    "SA": softmax_attention,
    "RetNet": retention,
    "LightNet": normalized_linear,
    "GSA": slot_attention,
    "FoX": fox,
    "KDA": delta_rule,
}

"""Compiled single-token state updates for the bounded mechanisms.

Each kernel returns a freshly allocated state (the input is never
modified) together with the per-head readout. Loop order is fixed, so a
given input always produces bit-identical output.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def retention_update(S, gamma, q, k, v):
    H, d, dv = S.shape
    out = np.empty_like(S)
    o = np.zeros((H, dv))
    for h in range(H):
        g = gamma[h]
        for i in range(d):
            ki = k[h, i]
            qi = q[h, i]
            for j in range(dv):
                x = g * S[h, i, j] + ki * v[h, j]
                out[h, i, j] = x
                o[h, j] += qi * x
    return out, o


@njit(cache=True)
def normalized_update(S, z, rescale, phi, q, v):
    H, d, dv = S.shape
    out = np.empty_like(S)
    zout = np.empty_like(z)
    num = np.zeros((H, dv))
    den = np.zeros(H)
    for h in range(H):
        r = rescale[h]
        for i in range(d):
            p = phi[h, i]
            qi = q[h, i]
            zi = z[h, i] * r + p
            zout[h, i] = zi
            den[h] += qi * zi
            for j in range(dv):
                x = S[h, i, j] * r + p * v[h, j]
                out[h, i, j] = x
                num[h, j] += qi * x
    return out, zout, num, den


@njit(cache=True)
def slot_update(K, V, alpha, k, v, q, scale):
    H, m, d = K.shape
    kout = np.empty_like(K)
    vout = np.empty_like(V)
    scores = np.zeros((H, m))
    for h in range(H):
        for s in range(m):
            a = alpha[h, s]
            w = 1.0 - a
            acc = 0.0
            for j in range(d):
                x = a * K[h, s, j] + w * k[h, j]
                kout[h, s, j] = x
                vout[h, s, j] = a * V[h, s, j] + w * v[h, j]
                acc += x * q[h, j]
            scores[h, s] = acc * scale
    return kout, vout, scores


@njit(cache=True)
def delta_update(S, decay, beta, k, v, q):
    H, d, dv = S.shape
    out = np.empty_like(S)
    o = np.zeros((H, dv))
    resid = np.empty(dv)
    for h in range(H):
        resid[:] = 0.0
        for i in range(d):
            a = decay[h, i]
            ki = k[h, i]
            for j in range(dv):
                x = a * S[h, i, j]
                out[h, i, j] = x
                resid[j] += ki * x
        for j in range(dv):
            resid[j] = v[h, j] - resid[j]
        for i in range(d):
            c = beta[h] * k[h, i]
            qi = q[h, i]
            for j in range(dv):
                x = out[h, i, j] + c * resid[j]
                out[h, i, j] = x
                o[h, j] += qi * x
    return out, o

"""Numba-compiled twins of the kernels in :mod:`cure.kernels_numpy`.

Explicit loops, nopython, no fastmath: results stay deterministic for a
fixed backend, and agree with the numpy kernels to rounding error.
Importing this module triggers (cached) JIT compilation.
"""

import numpy as np
from numba import njit

NAME = "numba"


@njit(cache=True)
def dense(x, w, b):
    n, p = x.shape
    m = w.shape[1]
    out = np.empty((n, m))
    for i in range(n):
        for j in range(m):
            acc = b[j]
            for k in range(p):
                acc += x[i, k] * w[k, j]
            out[i, j] = acc
    return out


@njit(cache=True)
def dense_tanh(x, w, b):
    n, p = x.shape
    m = w.shape[1]
    out = np.empty((n, m))
    for i in range(n):
        for j in range(m):
            acc = b[j]
            for k in range(p):
                acc += x[i, k] * w[k, j]
            out[i, j] = np.tanh(acc)
    return out


@njit(cache=True)
def normalize_rows(z):
    n, d = z.shape
    e = np.empty((n, d))
    nrm = np.empty(n)
    for i in range(n):
        acc = 0.0
        for j in range(d):
            acc += z[i, j] * z[i, j]
        nrm[i] = np.sqrt(acc)
        inv = 1.0 / nrm[i]
        for j in range(d):
            e[i, j] = z[i, j] * inv
    return e, nrm


@njit(cache=True)
def dense_backward(g_out, x, w):
    n, m = g_out.shape
    p = x.shape[1]
    g_x = np.zeros((n, p))
    g_w = np.zeros((p, m))
    g_b = np.zeros(m)
    for i in range(n):
        for j in range(m):
            g = g_out[i, j]
            g_b[j] += g
            for k in range(p):
                g_x[i, k] += g * w[k, j]
                g_w[k, j] += x[i, k] * g
    return g_x, g_w, g_b


@njit(cache=True)
def dense_tanh_backward(g_h, h, x, w):
    g_pre = g_h * (1.0 - h * h)
    return dense_backward(g_pre, x, w)


@njit(cache=True)
def normalize_backward(g_e, e, nrm):
    n, d = g_e.shape
    g_z = np.empty((n, d))
    for i in range(n):
        radial = 0.0
        for j in range(d):
            radial += g_e[i, j] * e[i, j]
        inv = 1.0 / nrm[i]
        for j in range(d):
            g_z[i, j] = (g_e[i, j] - e[i, j] * radial) * inv
    return g_z


@njit(cache=True)
def pairwise_sqdist(a, b):
    n, d = a.shape
    m = b.shape[0]
    out = np.empty((n, m))
    for i in range(n):
        for j in range(m):
            acc = 0.0
            for k in range(d):
                diff = a[i, k] - b[j, k]
                acc += diff * diff
            out[i, j] = acc
    return out

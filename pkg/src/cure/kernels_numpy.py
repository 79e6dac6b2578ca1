"""Pure-numpy kernels: the reference implementation of every hot inner loop.

The numba twins live in :mod:`cure.kernels_numba`; :mod:`cure.backend`
selects between the two via the ``CURE_BACKEND`` environment variable.
Both backends must agree to floating-point noise (see tests/test_backends.py).
"""

import numpy as np

NAME = "numpy"


def dense(x, w, b):
    """Affine layer: x @ w + b."""
    return x @ w + b


def dense_tanh(x, w, b):
    """Affine layer followed by tanh."""
    return np.tanh(x @ w + b)


def normalize_rows(z):
    """Row-wise L2 normalization; returns (unit rows, norms)."""
    nrm = np.sqrt(np.einsum("ij,ij->i", z, z))
    return z / nrm[:, None], nrm


def dense_backward(g_out, x, w):
    """Backward of ``dense``: gradients w.r.t. input, weight, bias."""
    g_x = g_out @ w.T
    g_w = x.T @ g_out
    g_b = g_out.sum(axis=0)
    return g_x, g_w, g_b


def dense_tanh_backward(g_h, h, x, w):
    """Backward of ``dense_tanh`` given its output ``h``."""
    g_pre = g_h * (1.0 - h * h)
    return dense_backward(g_pre, x, w)


def normalize_backward(g_e, e, nrm):
    """Backward of ``normalize_rows``: project out the radial component."""
    radial = np.einsum("ij,ij->i", g_e, e)
    return (g_e - e * radial[:, None]) / nrm[:, None]


def pairwise_sqdist(a, b):
    """Squared Euclidean distances between rows of ``a`` and rows of ``b``."""
    d = (
        np.einsum("ij,ij->i", a, a)[:, None]
        + np.einsum("ij,ij->i", b, b)[None, :]
        - 2.0 * (a @ b.T)
    )
    np.maximum(d, 0.0, out=d)
    return d

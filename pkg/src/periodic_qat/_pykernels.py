"""Pure-numpy reference kernels.

Every reduction runs in float64 in a fixed sequential order so that results
are bit-identical to the compiled kernels in ``_ckernels.pyx``. Vectorization
is only ever applied across *independent* output elements; the reduced axis
is walked by a Python loop or by ``np.add.accumulate`` (which is sequential
by definition).
"""

import numpy as np

NAME = "python"


def _seq_sum(terms):
    # ((0 + t0) + t1) + ... along axis 0. accumulate skips the leading zero,
    # which only matters for the sign of an all-(-0.0) sum; "+ 0.0" fixes it.
    return np.add.accumulate(terms, axis=0)[-1] + 0.0


def dense_forward(W, x, b):
    m, n = W.shape
    acc = np.zeros((m, x.shape[1]))
    for k in range(n):
        acc += W[:, k, None] * x[None, k, :]
    return acc + b[:, None]


def dense_backward(g, x, W):
    m, n = W.shape
    r = x.shape[1]
    gx = np.zeros((n, r))
    for i in range(m):
        gx += W[i, :, None] * g[i, None, :]
    gW = np.zeros((m, n))
    gb = np.zeros(m)
    for j in range(r):
        gW += g[:, j, None] * x[None, :, j]
        gb += g[:, j]
    return gx, gW, gb


def _window(x, di, dj, ho, wo, s1, s2):
    return x[:, di:di + s1 * (ho - 1) + 1:s1, dj:dj + s2 * (wo - 1) + 1:s2, :]


def conv2d_forward(x, F, s1, s2):
    r, h, w, c = x.shape
    m, n, _, c2 = F.shape
    ho = (h - m) // s1 + 1
    wo = (w - n) // s2 + 1
    acc = np.zeros((r, ho, wo, c2))
    # channel-major, then filter row, then filter column
    for ci in range(c):
        for di in range(m):
            for dj in range(n):
                patch = _window(x, di, dj, ho, wo, s1, s2)[..., ci]
                acc += patch[..., None] * F[di, dj, ci, :]
    return acc


def conv2d_backward(g, x, F, s1, s2):
    r, h, w, c = x.shape
    m, n, _, c2 = F.shape
    ho, wo = g.shape[1], g.shape[2]
    gx = np.zeros_like(x)
    for di in range(m):
        for dj in range(n):
            view = gx[:, di:di + s1 * (ho - 1) + 1:s1, dj:dj + s2 * (wo - 1) + 1:s2, :]
            for co in range(c2):
                view += g[..., co, None] * F[di, dj, :, co]
    gF = np.empty_like(F)
    P = r * ho * wo
    for di in range(m):
        for dj in range(n):
            patch = _window(x, di, dj, ho, wo, s1, s2).reshape(P, c)
            terms = patch[:, :, None] * g.reshape(P, c2)[:, None, :]
            gF[di, dj] = _seq_sum(terms)
    return gx, gF

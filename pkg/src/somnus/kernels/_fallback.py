"""Pure-numpy patch extraction kernels.

Column layout is channel-major: ``cols[(c*K + ki)*K + kj, (b*Ho + i)*Wo + j]``
holds ``x[b, c, i*s + ki - p, j*s + kj - p]`` (zero outside the image).
``col2im`` is the exact adjoint and accumulates contributions in
``(ki, kj)`` order starting from an all-zero buffer.
"""

import numpy as np


def im2col(x, k, stride, pad, out_h, out_w):
    b, c, h, w = x.shape
    if pad:
        xp = np.zeros((b, c, h + 2 * pad, w + 2 * pad), dtype=x.dtype)
        xp[:, :, pad:pad + h, pad:pad + w] = x
    else:
        xp = x
    xp = xp.transpose(1, 0, 2, 3)
    cols = np.empty((c, k, k, b, out_h, out_w), dtype=x.dtype)
    for ki in range(k):
        hi = ki + stride * out_h
        for kj in range(k):
            wj = kj + stride * out_w
            cols[:, ki, kj] = xp[:, :, ki:hi:stride, kj:wj:stride]
    return cols.reshape(c * k * k, b * out_h * out_w)


def col2im(cols, shape, k, stride, pad, out_h, out_w):
    b, c, h, w = shape
    src = cols.reshape(c, k, k, b, out_h, out_w)
    xp = np.zeros((c, b, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    for ki in range(k):
        hi = ki + stride * out_h
        for kj in range(k):
            wj = kj + stride * out_w
            xp[:, :, ki:hi:stride, kj:wj:stride] += src[:, ki, kj]
    return np.ascontiguousarray(xp[:, :, pad:pad + h, pad:pad + w].transpose(1, 0, 2, 3))

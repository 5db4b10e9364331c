# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled patch extraction kernels; same layout and summation order as
``_fallback``, so both backends agree bit for bit."""

import numpy as np
cimport numpy as cnp

cnp.import_array()

ctypedef fused real:
    float
    double


cdef inline Py_ssize_t _first(Py_ssize_t off, Py_ssize_t stride) nogil:
    # smallest i >= 0 with i*stride + off >= 0
    if off >= 0:
        return 0
    return (-off + stride - 1) // stride


cdef inline Py_ssize_t _stop(Py_ssize_t off, Py_ssize_t stride, Py_ssize_t size,
                             Py_ssize_t n) nogil:
    # one past the largest i < n with i*stride + off < size
    cdef Py_ssize_t s
    if size - off <= 0:
        return 0
    s = (size - off - 1) // stride + 1
    return s if s < n else n


def _im2col(real[:, :, :, ::1] x, real[:, ::1] cols, int k, int stride,
            int pad, int out_h, int out_w):
    cdef Py_ssize_t b, c, ki, kj, i, j, row, col, i0, i1, j0, j1
    cdef Py_ssize_t nb = x.shape[0], nc = x.shape[1]
    cdef Py_ssize_t h = x.shape[2], w = x.shape[3]
    with nogil:
        for c in range(nc):
            for ki in range(k):
                i0 = _first(ki - pad, stride)
                i1 = _stop(ki - pad, stride, h, out_h)
                for kj in range(k):
                    col = (c * k + ki) * k + kj
                    j0 = _first(kj - pad, stride)
                    j1 = _stop(kj - pad, stride, w, out_w)
                    for b in range(nb):
                        for i in range(out_h):
                            row = (b * out_h + i) * out_w
                            if i < i0 or i >= i1:
                                for j in range(out_w):
                                    cols[col, row + j] = 0
                                continue
                            for j in range(j0):
                                cols[col, row + j] = 0
                            for j in range(j0, j1):
                                cols[col, row + j] = x[b, c, i * stride + ki - pad,
                                                       j * stride + kj - pad]
                            for j in range(j1 if j1 > j0 else j0, out_w):
                                cols[col, row + j] = 0


def _col2im(real[:, ::1] cols, real[:, :, :, ::1] out, int k, int stride,
            int pad, int out_h, int out_w):
    cdef Py_ssize_t b, c, ki, kj, i, j, row, col, i0, i1, j0, j1, hi
    cdef Py_ssize_t nb = out.shape[0], nc = out.shape[1]
    cdef Py_ssize_t h = out.shape[2], w = out.shape[3]
    with nogil:
        for b in range(nb):
            for c in range(nc):
                for ki in range(k):
                    i0 = _first(ki - pad, stride)
                    i1 = _stop(ki - pad, stride, h, out_h)
                    for kj in range(k):
                        col = (c * k + ki) * k + kj
                        j0 = _first(kj - pad, stride)
                        j1 = _stop(kj - pad, stride, w, out_w)
                        for i in range(i0, i1):
                            hi = i * stride + ki - pad
                            row = (b * out_h + i) * out_w
                            for j in range(j0, j1):
                                out[b, c, hi, j * stride + kj - pad] += cols[col, row + j]


def im2col(x, int k, int stride, int pad, int out_h, int out_w):
    x = np.ascontiguousarray(x)
    b, c = x.shape[0], x.shape[1]
    cols = np.empty((c * k * k, b * out_h * out_w), dtype=x.dtype)
    _im2col(x, cols, k, stride, pad, out_h, out_w)
    return cols


def col2im(cols, shape, int k, int stride, int pad, int out_h, int out_w):
    cols = np.ascontiguousarray(cols)
    out = np.zeros(shape, dtype=cols.dtype)
    _col2im(cols, out, k, stride, pad, out_h, out_w)
    return out

# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels for the numpy autodiff engine.

Bit-identical twins of ``_pykernels``: same shapes, same summation order
for the scatter-adds, same tie-breaking for max pooling.
"""
import numpy as np
cimport numpy as cnp

ctypedef fused real:
    float
    double


def im2col3(real[:, :, :, ::1] x):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t b, ch, ki, kj, i, j, si, j0, j1, off
    cdef real* dst
    cdef const real* src
    dtype = np.float32 if real is float else np.float64
    out = np.empty((n, c * 9, h * w), dtype=dtype)
    cdef real[:, :, ::1] cols = out
    for b in range(n):
        for ch in range(c):
            for ki in range(3):
                for kj in range(3):
                    off = kj - 1
                    # valid output columns j satisfy 0 <= j + off < w
                    j0 = 1 if off < 0 else 0
                    j1 = w - 1 if off > 0 else w
                    dst = &cols[b, ch * 9 + ki * 3 + kj, 0]
                    for i in range(h):
                        si = i + ki - 1
                        if si < 0 or si >= h:
                            for j in range(w):
                                dst[j] = 0
                        else:
                            src = &x[b, ch, si, 0]
                            for j in range(j0):
                                dst[j] = 0
                            for j in range(j0, j1):
                                dst[j] = src[j + off]
                            for j in range(j1, w):
                                dst[j] = 0
                        dst += w
    return out


def col2im3(cols_in, Py_ssize_t c, Py_ssize_t h, Py_ssize_t w):
    cols_in = np.ascontiguousarray(cols_in)
    if cols_in.dtype == np.float32:
        return _col2im3[float](cols_in, c, h, w)
    return _col2im3[double](cols_in, c, h, w)


cdef _col2im3(real[:, :, ::1] cols, Py_ssize_t c, Py_ssize_t h, Py_ssize_t w):
    cdef Py_ssize_t n = cols.shape[0]
    cdef Py_ssize_t b, ch, ki, kj, i, j, wp = w + 2
    cdef real* dst
    cdef const real* src
    dtype = np.float32 if real is float else np.float64
    # accumulate into a padded buffer in the same (ki, kj) order as the numpy twin
    padded = np.zeros((n, c, h + 2, w + 2), dtype=dtype)
    cdef real[:, :, :, ::1] xp = padded
    for b in range(n):
        for ch in range(c):
            for ki in range(3):
                for kj in range(3):
                    src = &cols[b, ch * 9 + ki * 3 + kj, 0]
                    for i in range(h):
                        dst = &xp[b, ch, i + ki, kj]
                        for j in range(w):
                            dst[j] += src[j]
                        src += w
    return np.ascontiguousarray(padded[:, :, 1:-1, 1:-1])


def maxpool2_fwd(real[:, :, :, ::1] x):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t ho = h // 2, wo = w // 2
    cdef Py_ssize_t b, ch, i, j
    cdef real best, v
    cdef unsigned char k
    dtype = np.float32 if real is float else np.float64
    out_arr = np.empty((n, c, ho, wo), dtype=dtype)
    idx_arr = np.empty((n, c, ho, wo), dtype=np.uint8)
    cdef real[:, :, :, ::1] out = out_arr
    cdef unsigned char[:, :, :, ::1] idx = idx_arr
    for b in range(n):
        for ch in range(c):
            for i in range(ho):
                for j in range(wo):
                    best = x[b, ch, 2 * i, 2 * j]
                    k = 0
                    v = x[b, ch, 2 * i, 2 * j + 1]
                    if v > best:
                        best = v
                        k = 1
                    v = x[b, ch, 2 * i + 1, 2 * j]
                    if v > best:
                        best = v
                        k = 2
                    v = x[b, ch, 2 * i + 1, 2 * j + 1]
                    if v > best:
                        best = v
                        k = 3
                    out[b, ch, i, j] = best
                    idx[b, ch, i, j] = k
    return out_arr, idx_arr


def maxpool2_bwd(real[:, :, :, ::1] dout, const unsigned char[:, :, :, ::1] idx):
    cdef Py_ssize_t n = dout.shape[0], c = dout.shape[1], ho = dout.shape[2], wo = dout.shape[3]
    cdef Py_ssize_t b, ch, i, j
    cdef unsigned char k
    dtype = np.float32 if real is float else np.float64
    dx_arr = np.zeros((n, c, 2 * ho, 2 * wo), dtype=dtype)
    cdef real[:, :, :, ::1] dx = dx_arr
    for b in range(n):
        for ch in range(c):
            for i in range(ho):
                for j in range(wo):
                    k = idx[b, ch, i, j]
                    dx[b, ch, 2 * i + (k >> 1), 2 * j + (k & 1)] = dout[b, ch, i, j]
    return dx_arr


def upsample2_fwd(real[:, :, :, ::1] x):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t b, ch, i, j
    cdef real v
    dtype = np.float32 if real is float else np.float64
    out_arr = np.empty((n, c, 2 * h, 2 * w), dtype=dtype)
    cdef real[:, :, :, ::1] out = out_arr
    for b in range(n):
        for ch in range(c):
            for i in range(h):
                for j in range(w):
                    v = x[b, ch, i, j]
                    out[b, ch, 2 * i, 2 * j] = v
                    out[b, ch, 2 * i, 2 * j + 1] = v
                    out[b, ch, 2 * i + 1, 2 * j] = v
                    out[b, ch, 2 * i + 1, 2 * j + 1] = v
    return out_arr


def upsample2_bwd(real[:, :, :, ::1] dout):
    cdef Py_ssize_t n = dout.shape[0], c = dout.shape[1]
    cdef Py_ssize_t ho = dout.shape[2] // 2, wo = dout.shape[3] // 2
    cdef Py_ssize_t b, ch, i, j
    dtype = np.float32 if real is float else np.float64
    dx_arr = np.empty((n, c, ho, wo), dtype=dtype)
    cdef real[:, :, :, ::1] dx = dx_arr
    for b in range(n):
        for ch in range(c):
            for i in range(ho):
                for j in range(wo):
                    # same association order as the numpy twin
                    dx[b, ch, i, j] = ((dout[b, ch, 2 * i, 2 * j] + dout[b, ch, 2 * i, 2 * j + 1])
                                       + (dout[b, ch, 2 * i + 1, 2 * j] + dout[b, ch, 2 * i + 1, 2 * j + 1]))
    return dx_arr

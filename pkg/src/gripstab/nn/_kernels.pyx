# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled gather/scatter kernels: im2col/col2im and ceil-mode max pooling.

Same contracts and bit-level results as kernels_py; float32 and float64.
"""

import numpy as np

cimport cython
cimport numpy as cnp

cnp.import_array()

ctypedef fused real:
    float
    double


def im2col(real[:, :, :, ::1] xp, int kh, int kw, int sh, int sw,
           int oh, int ow):
    cdef Py_ssize_t b = xp.shape[0], c = xp.shape[1]
    cdef Py_ssize_t ib, ic, i, j, oy, ox, row, col
    if (oh - 1) * sh + kh > xp.shape[2] or (ow - 1) * sw + kw > xp.shape[3]:
        raise ValueError("im2col: windows exceed the padded input")
    dtype = np.float32 if real is float else np.float64
    out_arr = np.empty((c * kh * kw, b * oh * ow), dtype=dtype)
    cdef real[:, ::1] out = out_arr
    for ic in range(c):
        for i in range(kh):
            for j in range(kw):
                row = (ic * kh + i) * kw + j
                for ib in range(b):
                    for oy in range(oh):
                        col = (ib * oh + oy) * ow
                        for ox in range(ow):
                            out[row, col + ox] = xp[ib, ic, oy * sh + i,
                                                    ox * sw + j]
    return out_arr


def col2im(real[:, ::1] cols, int b, int c, int hp, int wp,
           int kh, int kw, int sh, int sw, int oh, int ow):
    cdef Py_ssize_t ib, ic, i, j, oy, ox, row, col
    if (oh - 1) * sh + kh > hp or (ow - 1) * sw + kw > wp:
        raise ValueError("col2im: windows exceed the padded input")
    dtype = np.float32 if real is float else np.float64
    xg_arr = np.zeros((b, c, hp, wp), dtype=dtype)
    cdef real[:, :, :, ::1] xg = xg_arr
    for ic in range(c):
        for i in range(kh):
            for j in range(kw):
                row = (ic * kh + i) * kw + j
                for ib in range(b):
                    for oy in range(oh):
                        col = (ib * oh + oy) * ow
                        for ox in range(ow):
                            xg[ib, ic, oy * sh + i, ox * sw + j] += \
                                cols[row, col + ox]
    return xg_arr


def maxpool_forward(real[:, :, :, ::1] x, int kh, int kw, int sh, int sw,
                    int oh, int ow):
    cdef Py_ssize_t b = x.shape[0], c = x.shape[1]
    cdef Py_ssize_t h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t ib, ic, oy, ox, i, j, h0, w0, hi, wi, best_i
    cdef real v, best
    dtype = np.float32 if real is float else np.float64
    out_arr = np.empty((b, c, oh, ow), dtype=dtype)
    idx_arr = np.empty((b, c, oh, ow), dtype=np.int32)
    cdef real[:, :, :, ::1] out = out_arr
    cdef cnp.int32_t[:, :, :, ::1] idx = idx_arr
    for ib in range(b):
        for ic in range(c):
            for oy in range(oh):
                h0 = oy * sh
                for ox in range(ow):
                    w0 = ox * sw
                    best = x[ib, ic, h0, w0]
                    best_i = h0 * w + w0
                    for i in range(kh):
                        hi = h0 + i
                        if hi >= h:
                            break
                        for j in range(kw):
                            wi = w0 + j
                            if wi >= w:
                                break
                            v = x[ib, ic, hi, wi]
                            if v > best:
                                best = v
                                best_i = hi * w + wi
                    out[ib, ic, oy, ox] = best
                    idx[ib, ic, oy, ox] = <cnp.int32_t> best_i
    return out_arr, idx_arr


def maxpool_backward(real[:, :, :, ::1] g, cnp.int32_t[:, :, :, ::1] idx,
                     int h, int w, int kh, int kw, int sh, int sw):
    cdef Py_ssize_t b = g.shape[0], c = g.shape[1]
    cdef Py_ssize_t oh = g.shape[2], ow = g.shape[3]
    cdef Py_ssize_t ib, ic, oy, ox, flat
    dtype = np.float32 if real is float else np.float64
    gx_arr = np.zeros((b, c, h, w), dtype=dtype)
    cdef real[:, :, :, ::1] gx = gx_arr
    for ib in range(b):
        for ic in range(c):
            for oy in range(oh):
                for ox in range(ow):
                    flat = idx[ib, ic, oy, ox]
                    gx[ib, ic, flat // w, flat % w] += g[ib, ic, oy, ox]
    return gx_arr

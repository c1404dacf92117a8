# cython: language_level=3
"""Compiled image kernels. Contract matches ``superdp._kernels_py``."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def im2col(const double[:, :, :, ::1] x, int kh, int kw, int stride, int pad):
    cdef Py_ssize_t b = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t oh = (h + 2 * pad - kh) // stride + 1
    cdef Py_ssize_t ow = (w + 2 * pad - kw) // stride + 1
    out_arr = np.empty((b, c * kh * kw, oh * ow), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t n, ch, i, j, r, s, row, yy, base, s_lo, s_hi
    with nogil:
        for n in range(b):
            for ch in range(c):
                for i in range(kh):
                    for j in range(kw):
                        row = (ch * kh + i) * kw + j
                        # output columns s whose source column s*stride + j - pad lies inside the image
                        s_lo = 0
                        while s_lo < ow and s_lo * stride + j - pad < 0:
                            s_lo += 1
                        s_hi = ow
                        while s_hi > s_lo and (s_hi - 1) * stride + j - pad >= w:
                            s_hi -= 1
                        for r in range(oh):
                            yy = r * stride + i - pad
                            base = r * ow
                            if yy < 0 or yy >= h:
                                for s in range(ow):
                                    out[n, row, base + s] = 0.0
                                continue
                            for s in range(s_lo):
                                out[n, row, base + s] = 0.0
                            for s in range(s_lo, s_hi):
                                out[n, row, base + s] = x[n, ch, yy, s * stride + j - pad]
                            for s in range(s_hi, ow):
                                out[n, row, base + s] = 0.0
    return out_arr


def col2im(cols_in, x_shape, int kh, int kw, int stride, int pad):
    cdef Py_ssize_t b = x_shape[0], c = x_shape[1], h = x_shape[2], w = x_shape[3]
    cdef Py_ssize_t oh = (h + 2 * pad - kh) // stride + 1
    cdef Py_ssize_t ow = (w + 2 * pad - kw) // stride + 1
    cdef const double[:, :, ::1] cols = np.ascontiguousarray(
        cols_in, dtype=np.float64).reshape(b, c * kh * kw, oh * ow)
    out_arr = np.zeros((b, c, h + 2 * pad, w + 2 * pad), dtype=np.float64)
    cdef double[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t n, ch, i, j, r, s, row
    # loop order keeps the per-element summation order of the NumPy fallback
    with nogil:
        for n in range(b):
            for ch in range(c):
                for i in range(kh):
                    for j in range(kw):
                        row = (ch * kh + i) * kw + j
                        for r in range(oh):
                            for s in range(ow):
                                out[n, ch, r * stride + i, s * stride + j] += cols[n, row, r * ow + s]
    if pad:
        out_arr = np.ascontiguousarray(out_arr[:, :, pad:-pad, pad:-pad])
    return out_arr


def maxpool2x2_forward(const double[:, :, :, ::1] x):
    cdef Py_ssize_t b = x.shape[0], c = x.shape[1]
    cdef Py_ssize_t oh = x.shape[2] // 2, ow = x.shape[3] // 2
    out_arr = np.empty((b, c, oh, ow), dtype=np.float64)
    idx_arr = np.empty((b, c, oh, ow), dtype=np.uint8)
    cdef double[:, :, :, ::1] out = out_arr
    cdef unsigned char[:, :, :, ::1] idx = idx_arr
    cdef Py_ssize_t n, ch, r, s
    cdef double best, v
    cdef unsigned char k
    with nogil:
        for n in range(b):
            for ch in range(c):
                for r in range(oh):
                    for s in range(ow):
                        best = x[n, ch, 2 * r, 2 * s]
                        k = 0
                        v = x[n, ch, 2 * r, 2 * s + 1]
                        if v > best:
                            best = v
                            k = 1
                        v = x[n, ch, 2 * r + 1, 2 * s]
                        if v > best:
                            best = v
                            k = 2
                        v = x[n, ch, 2 * r + 1, 2 * s + 1]
                        if v > best:
                            best = v
                            k = 3
                        out[n, ch, r, s] = best
                        idx[n, ch, r, s] = k
    return out_arr, idx_arr


def maxpool2x2_backward(const double[:, :, :, ::1] grad_out,
                        const unsigned char[:, :, :, ::1] idx, x_shape):
    cdef Py_ssize_t b = grad_out.shape[0], c = grad_out.shape[1]
    cdef Py_ssize_t oh = grad_out.shape[2], ow = grad_out.shape[3]
    out_arr = np.zeros(tuple(x_shape), dtype=np.float64)
    cdef double[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t n, ch, r, s
    cdef unsigned char k
    with nogil:
        for n in range(b):
            for ch in range(c):
                for r in range(oh):
                    for s in range(ow):
                        k = idx[n, ch, r, s]
                        out[n, ch, 2 * r + (k >> 1), 2 * s + (k & 1)] = grad_out[n, ch, r, s]
    return out_arr

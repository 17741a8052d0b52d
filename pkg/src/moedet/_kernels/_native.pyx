# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the conv2d/maxpool hot kernels.

Semantics match ``numpy_ref`` exactly, including the first-occurrence
tie rule in maxpool argmax.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def im2col(cnp.ndarray x_arr, int kh, int kw, int stride, int pad):
    cdef double[:, :, :, ::1] x = np.ascontiguousarray(x_arr, dtype=np.float64)
    cdef int b = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef int out_h = (h + 2 * pad - kh) // stride + 1
    cdef int out_w = (w + 2 * pad - kw) // stride + 1
    cols_arr = np.zeros((b, c * kh * kw, out_h * out_w), dtype=np.float64)
    cdef double[:, :, ::1] cols = cols_arr
    cdef int n, ch, i, j, oi, oj, ii, jj, row
    with nogil:
        for n in range(b):
            for ch in range(c):
                for i in range(kh):
                    for j in range(kw):
                        row = (ch * kh + i) * kw + j
                        for oi in range(out_h):
                            ii = oi * stride + i - pad
                            if ii < 0 or ii >= h:
                                continue
                            for oj in range(out_w):
                                jj = oj * stride + j - pad
                                if 0 <= jj < w:
                                    cols[n, row, oi * out_w + oj] = x[n, ch, ii, jj]
    return cols_arr


def col2im(cnp.ndarray cols_arr, int b, int c, int h, int w,
           int kh, int kw, int stride, int pad):
    cdef double[:, :, ::1] cols = np.ascontiguousarray(cols_arr, dtype=np.float64)
    cdef int out_h = (h + 2 * pad - kh) // stride + 1
    cdef int out_w = (w + 2 * pad - kw) // stride + 1
    x_arr = np.zeros((b, c, h, w), dtype=np.float64)
    cdef double[:, :, :, ::1] x = x_arr
    cdef int n, ch, i, j, oi, oj, ii, jj, row
    with nogil:
        for n in range(b):
            for ch in range(c):
                for i in range(kh):
                    for j in range(kw):
                        row = (ch * kh + i) * kw + j
                        for oi in range(out_h):
                            ii = oi * stride + i - pad
                            if ii < 0 or ii >= h:
                                continue
                            for oj in range(out_w):
                                jj = oj * stride + j - pad
                                if 0 <= jj < w:
                                    x[n, ch, ii, jj] += cols[n, row, oi * out_w + oj]
    return x_arr


def maxpool2d_forward(cnp.ndarray x_arr, int k, int stride):
    cdef double[:, :, :, ::1] x = np.ascontiguousarray(x_arr, dtype=np.float64)
    cdef int b = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef int out_h = (h - k) // stride + 1
    cdef int out_w = (w - k) // stride + 1
    out_arr = np.empty((b, c, out_h, out_w), dtype=np.float64)
    arg_arr = np.empty((b, c, out_h, out_w), dtype=np.int64)
    cdef double[:, :, :, ::1] out = out_arr
    cdef long long[:, :, :, ::1] arg = arg_arr
    cdef int n, ch, oi, oj, i, j, ii, jj
    cdef double best, v
    cdef long long best_idx
    with nogil:
        for n in range(b):
            for ch in range(c):
                for oi in range(out_h):
                    for oj in range(out_w):
                        ii = oi * stride
                        jj = oj * stride
                        best = x[n, ch, ii, jj]
                        best_idx = ii * w + jj
                        for i in range(k):
                            for j in range(k):
                                v = x[n, ch, ii + i, jj + j]
                                if v > best:
                                    best = v
                                    best_idx = (ii + i) * w + (jj + j)
                        out[n, ch, oi, oj] = best
                        arg[n, ch, oi, oj] = best_idx
    return out_arr, arg_arr


def maxpool2d_backward(cnp.ndarray grad_arr, cnp.ndarray arg_arr, int h, int w):
    cdef double[:, :, :, ::1] grad = np.ascontiguousarray(grad_arr, dtype=np.float64)
    cdef long long[:, :, :, ::1] arg = np.ascontiguousarray(arg_arr, dtype=np.int64)
    cdef int b = grad.shape[0], c = grad.shape[1]
    cdef int out_h = grad.shape[2], out_w = grad.shape[3]
    gx_arr = np.zeros((b, c, h * w), dtype=np.float64)
    cdef double[:, :, ::1] gx = gx_arr
    cdef int n, ch, oi, oj
    with nogil:
        for n in range(b):
            for ch in range(c):
                for oi in range(out_h):
                    for oj in range(out_w):
                        gx[n, ch, arg[n, ch, oi, oj]] += grad[n, ch, oi, oj]
    return gx_arr.reshape(b, c, h, w)

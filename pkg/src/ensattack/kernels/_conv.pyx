# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled convolution kernels (hot path of the perturbation machine).

Same contracts as ensattack.kernels.reference; float32, valid padding,
single sample, channel-first.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()

BACKEND_NAME = "cython"


def conv2d_forward(cnp.ndarray[cnp.float32_t, ndim=3] x,
                   cnp.ndarray[cnp.float32_t, ndim=4] w,
                   cnp.ndarray[cnp.float32_t, ndim=1] b,
                   int stride):
    cdef int cin = x.shape[0], h = x.shape[1], wd = x.shape[2]
    cdef int cout = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef int oh = (h - kh) // stride + 1
    cdef int ow = (wd - kw) // stride + 1
    cdef cnp.ndarray[cnp.float32_t, ndim=3] y = np.empty((cout, oh, ow), dtype=np.float32)
    cdef int co, ci, p, q, u, v
    cdef float acc
    for co in range(cout):
        for p in range(oh):
            for q in range(ow):
                acc = b[co]
                for ci in range(cin):
                    for u in range(kh):
                        for v in range(kw):
                            acc += x[ci, p * stride + u, q * stride + v] * w[co, ci, u, v]
                y[co, p, q] = acc
    return y


def conv2d_grad_input(cnp.ndarray[cnp.float32_t, ndim=3] dy,
                      cnp.ndarray[cnp.float32_t, ndim=4] w,
                      int stride, int in_h, int in_w):
    cdef int cout = w.shape[0], cin = w.shape[1], kh = w.shape[2], kw = w.shape[3]
    cdef int oh = dy.shape[1], ow = dy.shape[2]
    cdef cnp.ndarray[cnp.float32_t, ndim=3] dx = np.zeros((cin, in_h, in_w), dtype=np.float32)
    cdef int co, ci, p, q, u, v
    cdef float g
    for co in range(cout):
        for p in range(oh):
            for q in range(ow):
                g = dy[co, p, q]
                for ci in range(cin):
                    for u in range(kh):
                        for v in range(kw):
                            dx[ci, p * stride + u, q * stride + v] += g * w[co, ci, u, v]
    return dx


def conv2d_grad_params(cnp.ndarray[cnp.float32_t, ndim=3] dy,
                       cnp.ndarray[cnp.float32_t, ndim=3] x,
                       int kh, int kw, int stride):
    cdef int cout = dy.shape[0], oh = dy.shape[1], ow = dy.shape[2]
    cdef int cin = x.shape[0]
    cdef cnp.ndarray[cnp.float32_t, ndim=4] dw = np.zeros((cout, cin, kh, kw), dtype=np.float32)
    cdef cnp.ndarray[cnp.float32_t, ndim=1] db = np.zeros(cout, dtype=np.float32)
    cdef int co, ci, p, q, u, v
    cdef float g
    for co in range(cout):
        for p in range(oh):
            for q in range(ow):
                g = dy[co, p, q]
                db[co] += g
                for ci in range(cin):
                    for u in range(kh):
                        for v in range(kw):
                            dw[co, ci, u, v] += g * x[ci, p * stride + u, q * stride + v]
    return dw, db

# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled per-frame streaming kernels (hot inner loop of encode/decode).

Matrix products go through BLAS (scipy's exported cython_blas gemv); the
surrounding glue (depthwise taps, layer norm, GELU, GRN, residual) is fused
into C loops, removing the per-frame Python/numpy dispatch overhead that
dominates streaming inference.  Semantics mirror ``_pykern``: one call = one
frame, accumulation order fixed, so chunking never changes results.
"""

import numpy as np

cimport cython
cimport numpy as cnp
from libc.math cimport erf, sqrt
from scipy.linalg.cython_blas cimport dgemv, sgemv

cnp.import_array()

NAME = "cython"

ctypedef fused floating:
    float
    double

cdef double _INV_SQRT2 = 0.7071067811865476


cdef inline void _gemv(floating[:, ::1] a, floating* x, floating* y) noexcept nogil:
    """y = a @ x for row-major a, via Fortran gemv on the transposed view."""
    cdef int m = <int> a.shape[0], n = <int> a.shape[1], inc = 1
    cdef char trans = b'T'
    cdef float alpha_s = 1.0, beta_s = 0.0
    cdef double alpha_d = 1.0, beta_d = 0.0
    if floating is float:
        sgemv(&trans, &n, &m, &alpha_s, <float*> &a[0, 0], &n, <float*> x, &inc,
              &beta_s, <float*> y, &inc)
    else:
        dgemv(&trans, &n, &m, &alpha_d, <double*> &a[0, 0], &n, <double*> x, &inc,
              &beta_d, <double*> y, &inc)


def gemv(floating[:, ::1] a2d, floating[::1] x):
    """Matrix-vector product (BLAS-backed, fixed-shape call per frame)."""
    if floating is float:
        out_arr = np.empty(a2d.shape[0], dtype=np.float32)
    else:
        out_arr = np.empty(a2d.shape[0], dtype=np.float64)
    cdef floating[::1] out = out_arr
    if a2d.shape[0] and a2d.shape[1]:
        _gemv(a2d, &x[0], &out[0])
    return out_arr


def depthwise_frame(floating[:, ::1] w, floating[:, ::1] win):
    """Depthwise conv tap: w, win are (C, K); returns (C,)."""
    cdef Py_ssize_t c, k, n_ch = w.shape[0], kk = w.shape[1]
    if floating is float:
        out_arr = np.empty(n_ch, dtype=np.float32)
    else:
        out_arr = np.empty(n_ch, dtype=np.float64)
    cdef floating[::1] out = out_arr
    cdef double acc
    for c in range(n_ch):
        acc = 0.0
        for k in range(kk):
            acc += <double> w[c, k] * <double> win[c, k]
        out[c] = <floating> acc
    return out_arr


def gelu_vec(floating[::1] x):
    cdef Py_ssize_t i, n = x.shape[0]
    if floating is float:
        out_arr = np.empty(n, dtype=np.float32)
    else:
        out_arr = np.empty(n, dtype=np.float64)
    cdef floating[::1] out = out_arr
    cdef double v
    for i in range(n):
        v = <double> x[i]
        out[i] = <floating> (v * 0.5 * (1.0 + erf(v * _INV_SQRT2)))
    return out_arr


def convnext_frame(
    floating[:, ::1] dw_win,
    floating[:, ::1] dw_w,
    floating[::1] dw_b,
    floating[::1] ln_g,
    floating[::1] ln_b,
    double ln_eps,
    floating[:, ::1] w1,
    floating[::1] b1,
    floating[:, ::1] w2,
    floating[::1] b2,
    floating[::1] grn_g,
    floating[::1] grn_b,
    double grn_eps,
    floating[::1] grn_sumsq,
    bint grn_cumulative,
):
    """Fused ConvNeXt-v2 block step; mutates grn_sumsq when cumulative."""
    cdef Py_ssize_t c, k, j
    cdef Py_ssize_t c_l = dw_w.shape[0], kk = dw_w.shape[1], c_h = w1.shape[0]
    if floating is float:
        h_arr = np.empty(c_l, dtype=np.float32)
        z_arr = np.empty(c_h, dtype=np.float32)
        out_arr = np.empty(c_l, dtype=np.float32)
    else:
        h_arr = np.empty(c_l, dtype=np.float64)
        z_arr = np.empty(c_h, dtype=np.float64)
        out_arr = np.empty(c_l, dtype=np.float64)
    cdef floating[::1] h = h_arr
    cdef floating[::1] z = z_arr
    cdef floating[::1] out = out_arr
    cdef double acc, mu, var, d, inv_std, v, g_norm, m_norm

    with nogil:
        # depthwise causal conv tap
        for c in range(c_l):
            acc = 0.0
            for k in range(kk):
                acc += <double> dw_w[c, k] * <double> dw_win[c, k]
            h[c] = <floating> (acc + <double> dw_b[c])

        # per-frame layer norm over channels
        mu = 0.0
        for c in range(c_l):
            mu += <double> h[c]
        mu /= c_l
        var = 0.0
        for c in range(c_l):
            d = <double> h[c] - mu
            var += d * d
        var /= c_l
        inv_std = 1.0 / sqrt(var + ln_eps)
        for c in range(c_l):
            h[c] = <floating> (<double> ln_g[c] * ((<double> h[c] - mu) * inv_std)
                               + <double> ln_b[c])

        # expand linear + exact-erf GELU
        _gemv(w1, &h[0], &z[0])
        for j in range(c_h):
            v = <double> z[j] + <double> b1[j]
            z[j] = <floating> (v * 0.5 * (1.0 + erf(v * _INV_SQRT2)))

        # GRN with running channel norms
        if grn_cumulative:
            for j in range(c_h):
                grn_sumsq[j] = <floating> (<double> grn_sumsq[j]
                                           + <double> z[j] * <double> z[j])
        m_norm = 0.0
        for j in range(c_h):
            m_norm += sqrt(<double> grn_sumsq[j])
        m_norm /= c_h
        for j in range(c_h):
            g_norm = sqrt(<double> grn_sumsq[j])
            z[j] = <floating> (<double> grn_g[j] * (<double> z[j] * (g_norm / (m_norm + grn_eps)))
                               + <double> grn_b[j] + <double> z[j])

        # contract linear + bias + residual
        _gemv(w2, &z[0], &out[0])
        for c in range(c_l):
            out[c] = <floating> (<double> out[c] + <double> b2[c] + <double> dw_win[c, kk - 1])
    return out_arr

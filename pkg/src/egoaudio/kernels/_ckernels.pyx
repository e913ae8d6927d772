# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled 3x3 convolution (im2col + BLAS gemm) and 2x2 max-pool kernels, float32 / float64."""

import numpy as np
cimport numpy as cnp
from cython cimport floating

cnp.import_array()


from scipy.linalg.cython_blas cimport sgemm, dgemm


cdef inline void _gemm(char *ta, char *tb, int m, int n, int k, floating alpha,
                       floating *a, int lda, floating *b, int ldb,
                       floating beta, floating *c, int ldc) noexcept nogil:
    # column-major BLAS gemm: c = alpha * op(a) @ op(b) + beta * c
    if floating is float:
        sgemm(ta, tb, &m, &n, &k, &alpha, a, &lda, b, &ldb, &beta, c, &ldc)
    else:
        dgemm(ta, tb, &m, &n, &k, &alpha, a, &lda, b, &ldb, &beta, c, &ldc)


cdef void _im2col(const floating *x, floating *cols, Py_ssize_t C, Py_ssize_t H, Py_ssize_t W) noexcept nogil:
    # cols row (c*9 + dy*3 + dx), column (i*W + j) = x[c, i+dy-1, j+dx-1], zero outside
    cdef Py_ssize_t c, dy, dx, i, j, si, j0, j1
    cdef floating *row
    cdef const floating *src
    for c in range(C):
        for dy in range(3):
            for dx in range(3):
                row = cols + ((c * 9 + dy * 3 + dx) * H * W)
                j0 = 1 if dx == 0 else 0
                j1 = W - 1 if dx == 2 else W
                for i in range(H):
                    si = i + dy - 1
                    if si < 0 or si >= H:
                        for j in range(W):
                            row[i * W + j] = 0
                        continue
                    src = x + (c * H + si) * W + dx - 1
                    for j in range(j0):
                        row[i * W + j] = 0
                    for j in range(j0, j1):
                        row[i * W + j] = src[j]
                    for j in range(j1, W):
                        row[i * W + j] = 0


cdef void _col2im(const floating *cols, floating *gx, Py_ssize_t C, Py_ssize_t H, Py_ssize_t W) noexcept nogil:
    # adjoint of _im2col: scatter-add columns back into the (C, H, W) plane
    cdef Py_ssize_t c, dy, dx, i, j, si, j0, j1
    cdef const floating *row
    cdef floating *dst
    for c in range(C):
        for dy in range(3):
            for dx in range(3):
                row = cols + ((c * 9 + dy * 3 + dx) * H * W)
                j0 = 1 if dx == 0 else 0
                j1 = W - 1 if dx == 2 else W
                for i in range(H):
                    si = i + dy - 1
                    if si < 0 or si >= H:
                        continue
                    dst = gx + (c * H + si) * W + dx - 1
                    for j in range(j0, j1):
                        dst[j] += row[i * W + j]


def conv3x3_forward(floating[:, :, :, ::1] x, floating[:, :, :, ::1] w, floating[::1] b):
    """Cross-correlation with zero padding 1, stride 1; NCHW in, NKHW out."""
    cdef Py_ssize_t N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t K = w.shape[0]
    cdef Py_ssize_t n, k, p, HW = H * W
    dtype = np.float32 if floating is float else np.float64
    y_arr = np.empty((N, K, H, W), dtype=dtype)
    cols_arr = np.empty(C * 9 * HW, dtype=dtype)
    cdef floating[:, :, :, ::1] y = y_arr
    cdef floating[::1] cols = cols_arr
    cdef floating *yn
    with nogil:
        for n in range(N):
            _im2col(&x[n, 0, 0, 0], &cols[0], C, H, W)
            yn = &y[n, 0, 0, 0]
            for k in range(K):
                for p in range(HW):
                    yn[k * HW + p] = b[k]
            _gemm(b"N", b"N", <int>HW, <int>K, <int>(C * 9), 1,
                  &cols[0], <int>HW, &w[0, 0, 0, 0], <int>(C * 9), 1, yn, <int>HW)
    return y_arr


def conv3x3_backward(floating[:, :, :, ::1] x, floating[:, :, :, ::1] w, floating[:, :, :, ::1] gy):
    """Gradients (grad_input, grad_weight, grad_bias) of :func:`conv3x3_forward`."""
    cdef Py_ssize_t N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t K = w.shape[0]
    cdef Py_ssize_t n, k, p, HW = H * W
    cdef double acc
    dtype = np.float32 if floating is float else np.float64
    gx_arr = np.zeros((N, C, H, W), dtype=dtype)
    gw_arr = np.zeros((K, C, 3, 3), dtype=dtype)
    gb_arr = np.zeros(K, dtype=dtype)
    cols_arr = np.empty(C * 9 * HW, dtype=dtype)
    cdef floating[:, :, :, ::1] gx = gx_arr
    cdef floating[:, :, :, ::1] gw = gw_arr
    cdef floating[::1] gb = gb_arr
    cdef floating[::1] cols = cols_arr
    cdef floating *gyn
    with nogil:
        for k in range(K):
            acc = 0.0
            for n in range(N):
                gyn = &gy[n, k, 0, 0]
                for p in range(HW):
                    acc += gyn[p]
            gb[k] = <floating>acc
        for n in range(N):
            gyn = &gy[n, 0, 0, 0]
            _im2col(&x[n, 0, 0, 0], &cols[0], C, H, W)
            _gemm(b"T", b"N", <int>(C * 9), <int>K, <int>HW, 1,
                  &cols[0], <int>HW, gyn, <int>HW, 1, &gw[0, 0, 0, 0], <int>(C * 9))
            _gemm(b"N", b"T", <int>HW, <int>(C * 9), <int>K, 1,
                  gyn, <int>HW, &w[0, 0, 0, 0], <int>(C * 9), 0, &cols[0], <int>HW)
            _col2im(&cols[0], &gx[n, 0, 0, 0], C, H, W)
    return gx_arr, gw_arr, gb_arr


def maxpool2x2_forward(floating[:, :, :, ::1] x):
    """2x2/stride-2 max pool; returns (output, window offset 0..3 of each max).

    Scans each window in flat-index order and keeps the first maximum.
    """
    cdef Py_ssize_t N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t Ho = H // 2, Wo = W // 2
    cdef Py_ssize_t n, c, i, j
    cdef floating m, v
    cdef unsigned char a
    dtype = np.float32 if floating is float else np.float64
    y_arr = np.empty((N, C, Ho, Wo), dtype=dtype)
    idx_arr = np.empty((N, C, Ho, Wo), dtype=np.uint8)
    cdef floating[:, :, :, ::1] y = y_arr
    cdef unsigned char[:, :, :, ::1] idx = idx_arr
    with nogil:
        for n in range(N):
            for c in range(C):
                for i in range(Ho):
                    for j in range(Wo):
                        m = x[n, c, 2 * i, 2 * j]
                        a = 0
                        v = x[n, c, 2 * i, 2 * j + 1]
                        if v > m:
                            m = v
                            a = 1
                        v = x[n, c, 2 * i + 1, 2 * j]
                        if v > m:
                            m = v
                            a = 2
                        v = x[n, c, 2 * i + 1, 2 * j + 1]
                        if v > m:
                            m = v
                            a = 3
                        y[n, c, i, j] = m
                        idx[n, c, i, j] = a
    return y_arr, idx_arr


def maxpool2x2_backward(floating[:, :, :, ::1] gy, unsigned char[:, :, :, ::1] idx, Py_ssize_t H, Py_ssize_t W):
    cdef Py_ssize_t N = gy.shape[0], C = gy.shape[1], Ho = gy.shape[2], Wo = gy.shape[3]
    cdef Py_ssize_t n, c, i, j
    cdef unsigned char a
    dtype = np.float32 if floating is float else np.float64
    gx_arr = np.zeros((N, C, H, W), dtype=dtype)
    cdef floating[:, :, :, ::1] gx = gx_arr
    with nogil:
        for n in range(N):
            for c in range(C):
                for i in range(Ho):
                    for j in range(Wo):
                        a = idx[n, c, i, j]
                        gx[n, c, 2 * i + (a >> 1), 2 * j + (a & 1)] = gy[n, c, i, j]
    return gx_arr

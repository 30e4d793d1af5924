# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled conv2d / depth-wise correlation kernels.

Every routine works on a single channels-first sample of contiguous float64
data. Convolutions unfold the input in C (im2col, implicit zero padding) and
hand the product to BLAS dgemm through scipy's Cython bindings; the depth-wise
correlation is a direct loop nest.
"""

import numpy as np
cimport numpy as cnp
cimport scipy.linalg.cython_blas as blas

cnp.import_array()


cdef void _im2col(const double[:, :, ::1] x, double[:, ::1] cols, Py_ssize_t kh, Py_ssize_t kw,
                  Py_ssize_t Ho, Py_ssize_t Wo, int stride, int padding) noexcept nogil:
    # cols[(c*kh + i)*kw + j, oy*Wo + ox] = x[c, oy*stride + i - pad, ox*stride + j - pad] (0 outside)
    cdef Py_ssize_t C = x.shape[0], H = x.shape[1], W = x.shape[2]
    cdef Py_ssize_t c, i, j, oy, ox, iy, ix, row
    for c in range(C):
        for i in range(kh):
            for j in range(kw):
                row = (c * kh + i) * kw + j
                for oy in range(Ho):
                    iy = oy * stride + i - padding
                    if iy < 0 or iy >= H:
                        for ox in range(Wo):
                            cols[row, oy * Wo + ox] = 0.0
                        continue
                    for ox in range(Wo):
                        ix = ox * stride + j - padding
                        if ix < 0 or ix >= W:
                            cols[row, oy * Wo + ox] = 0.0
                        else:
                            cols[row, oy * Wo + ox] = x[c, iy, ix]


cdef void _col2im(const double[:, ::1] cols, double[:, :, ::1] gx, Py_ssize_t kh, Py_ssize_t kw,
                  Py_ssize_t Ho, Py_ssize_t Wo, int stride, int padding) noexcept nogil:
    cdef Py_ssize_t C = gx.shape[0], H = gx.shape[1], W = gx.shape[2]
    cdef Py_ssize_t c, i, j, oy, ox, iy, ix, row
    for c in range(C):
        for i in range(kh):
            for j in range(kw):
                row = (c * kh + i) * kw + j
                for oy in range(Ho):
                    iy = oy * stride + i - padding
                    if iy < 0 or iy >= H:
                        continue
                    for ox in range(Wo):
                        ix = ox * stride + j - padding
                        if ix >= 0 and ix < W:
                            gx[c, iy, ix] += cols[row, oy * Wo + ox]


cdef void _gemm(char ta, char tb, int m, int n, int k, const double *a, int lda,
                const double *b, int ldb, double *c, int ldc) noexcept nogil:
    # column-major C = op(A) op(B); row-major callers pass operands swapped
    cdef double one = 1.0, zero = 0.0
    blas.dgemm(&ta, &tb, &m, &n, &k, &one, <double *>a, &lda, <double *>b, &ldb, &zero, c, &ldc)


def conv2d_forward(const double[:, :, ::1] x, const double[:, :, :, ::1] w,
                   int stride, int padding):
    cdef Py_ssize_t C = x.shape[0], H = x.shape[1], W = x.shape[2]
    cdef Py_ssize_t K = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t Ho = (H + 2 * padding - kh) // stride + 1
    cdef Py_ssize_t Wo = (W + 2 * padding - kw) // stride + 1
    cdef int N = <int>(Ho * Wo), Kd = <int>(C * kh * kw), Kn = <int>K
    cols_arr = np.empty((Kd, N), dtype=np.float64)
    out_arr = np.empty((K, Ho, Wo), dtype=np.float64)
    cdef double[:, ::1] cols = cols_arr
    cdef double[:, :, ::1] out = out_arr
    with nogil:
        _im2col(x, cols, kh, kw, Ho, Wo, stride, padding)
        # out(K x N) = w(K x Kd) @ cols(Kd x N)
        _gemm(b'N', b'N', N, Kn, Kd, &cols[0, 0], N, &w[0, 0, 0, 0], Kd, &out[0, 0, 0], N)
    return out_arr


def conv2d_backward_input(const double[:, :, ::1] gout, const double[:, :, :, ::1] w,
                          int H, int W, int stride, int padding):
    cdef Py_ssize_t K = w.shape[0], C = w.shape[1], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t Ho = gout.shape[1], Wo = gout.shape[2]
    cdef int N = <int>(Ho * Wo), Kd = <int>(C * kh * kw), Kn = <int>K
    cols_arr = np.empty((Kd, N), dtype=np.float64)
    gx_arr = np.zeros((C, H, W), dtype=np.float64)
    cdef double[:, ::1] cols = cols_arr
    cdef double[:, :, ::1] gx = gx_arr
    with nogil:
        # cols(Kd x N) = w^T(Kd x K) @ gout(K x N)
        _gemm(b'N', b'T', N, Kd, Kn, &gout[0, 0, 0], N, &w[0, 0, 0, 0], Kd, &cols[0, 0], N)
        _col2im(cols, gx, kh, kw, Ho, Wo, stride, padding)
    return gx_arr


def conv2d_backward_weight(const double[:, :, ::1] gout, const double[:, :, ::1] x,
                           int kh, int kw, int stride, int padding):
    cdef Py_ssize_t C = x.shape[0]
    cdef Py_ssize_t K = gout.shape[0], Ho = gout.shape[1], Wo = gout.shape[2]
    cdef int N = <int>(Ho * Wo), Kd = <int>(C * kh * kw), Kn = <int>K
    cols_arr = np.empty((Kd, N), dtype=np.float64)
    gw_arr = np.empty((K, C, kh, kw), dtype=np.float64)
    cdef double[:, ::1] cols = cols_arr
    cdef double[:, :, :, ::1] gw = gw_arr
    with nogil:
        _im2col(x, cols, kh, kw, Ho, Wo, stride, padding)
        # gw(K x Kd) = gout(K x N) @ cols^T(N x Kd)
        _gemm(b'T', b'N', Kd, Kn, N, &cols[0, 0], N, &gout[0, 0, 0], N, &gw[0, 0, 0, 0], Kd)
    return gw_arr


def xcorr_forward(const double[:, :, ::1] x, const double[:, :, ::1] z):
    cdef Py_ssize_t C = x.shape[0], Hx = x.shape[1], Wx = x.shape[2]
    cdef Py_ssize_t Hz = z.shape[1], Wz = z.shape[2]
    cdef Py_ssize_t Ho = Hx - Hz + 1, Wo = Wx - Wz + 1
    out_arr = np.zeros((C, Ho, Wo), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t c, oy, ox, i, j
    cdef double zv
    with nogil:
        for c in range(C):
            for i in range(Hz):
                for j in range(Wz):
                    zv = z[c, i, j]
                    for oy in range(Ho):
                        for ox in range(Wo):
                            out[c, oy, ox] += zv * x[c, oy + i, ox + j]
    return out_arr


def xcorr_backward(const double[:, :, ::1] gout, const double[:, :, ::1] x,
                   const double[:, :, ::1] z):
    cdef Py_ssize_t C = x.shape[0], Hx = x.shape[1], Wx = x.shape[2]
    cdef Py_ssize_t Hz = z.shape[1], Wz = z.shape[2]
    cdef Py_ssize_t Ho = gout.shape[1], Wo = gout.shape[2]
    gx_arr = np.zeros((C, Hx, Wx), dtype=np.float64)
    gz_arr = np.zeros((C, Hz, Wz), dtype=np.float64)
    cdef double[:, :, ::1] gx = gx_arr
    cdef double[:, :, ::1] gz = gz_arr
    cdef Py_ssize_t c, oy, ox, i, j
    cdef double zv, acc, g
    with nogil:
        for c in range(C):
            for i in range(Hz):
                for j in range(Wz):
                    zv = z[c, i, j]
                    acc = 0.0
                    for oy in range(Ho):
                        for ox in range(Wo):
                            g = gout[c, oy, ox]
                            acc += g * x[c, oy + i, ox + j]
                            gx[c, oy + i, ox + j] += g * zv
                    gz[c, i, j] = acc
    return gx_arr, gz_arr

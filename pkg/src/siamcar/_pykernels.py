"""Pure numpy fallback for the compiled kernels in ``_ckernels.pyx``.

Same signatures, same single-sample channels-first float64 layout.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _pad(x, padding):
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (padding, padding), (padding, padding)))


def _windows(xp, kh, kw, stride):
    # (C, Ho, Wo, kh, kw) view, no copy
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))
    return win[:, ::stride, ::stride]


def conv2d_forward(x, w, stride, padding):
    kh, kw = w.shape[2], w.shape[3]
    win = _windows(_pad(x, padding), kh, kw, stride)
    return np.ascontiguousarray(np.einsum("chwij,kcij->khw", win, w, optimize=True))


def conv2d_backward_input(gout, w, H, W, stride, padding):
    K, C, kh, kw = w.shape
    Ho, Wo = gout.shape[1], gout.shape[2]
    cols = np.einsum("kcij,khw->cijhw", w, gout, optimize=True)
    gxp = np.zeros((C, H + 2 * padding, W + 2 * padding))
    for i in range(kh):
        for j in range(kw):
            gxp[:, i:i + stride * (Ho - 1) + 1:stride, j:j + stride * (Wo - 1) + 1:stride] += cols[:, i, j]
    if padding:
        gxp = gxp[:, padding:padding + H, padding:padding + W]
    return np.ascontiguousarray(gxp)


def conv2d_backward_weight(gout, x, kh, kw, stride, padding):
    win = _windows(_pad(x, padding), kh, kw, stride)
    Ho, Wo = gout.shape[1], gout.shape[2]
    win = win[:, :Ho, :Wo]
    return np.ascontiguousarray(np.einsum("chwij,khw->kcij", win, gout, optimize=True))


def xcorr_forward(x, z):
    Hz, Wz = z.shape[1], z.shape[2]
    win = sliding_window_view(x, (Hz, Wz), axis=(1, 2))
    return np.ascontiguousarray(np.einsum("chwij,cij->chw", win, z, optimize=True))


def xcorr_backward(gout, x, z):
    Hz, Wz = z.shape[1], z.shape[2]
    Ho, Wo = gout.shape[1], gout.shape[2]
    win = sliding_window_view(x, (Hz, Wz), axis=(1, 2))
    gz = np.einsum("chwij,chw->cij", win, gout, optimize=True)
    gx = np.zeros_like(x)
    for i in range(Hz):
        for j in range(Wz):
            gx[:, i:i + Ho, j:j + Wo] += z[:, i, j, None, None] * gout
    return gx, np.ascontiguousarray(gz)

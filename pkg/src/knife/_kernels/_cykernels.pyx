# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled hot kernels: time-axis convolution and radix-2 FFT butterflies.

Layout contract shared with numpy_backend; loops keep the innermost axis
contiguous so the C compiler can vectorize the multiply-accumulate.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp

cnp.import_array()


def conv1d_forward(double[:, :, ::1] x, double[:, ::1] w, int stride):
    cdef Py_ssize_t batch = x.shape[0], channels = x.shape[1], t_in = x.shape[2]
    cdef Py_ssize_t filters = w.shape[0], kernel = w.shape[1]
    cdef Py_ssize_t t_out = (t_in - kernel) // stride + 1
    out_arr = np.zeros((batch, filters, channels, t_out), dtype=np.float64)
    cdef double[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t b, f, c, t, k
    cdef double wfk
    with nogil:
        if stride == 1:
            for b in range(batch):
                for c in range(channels):
                    for f in range(filters):
                        for k in range(kernel):
                            wfk = w[f, k]
                            for t in range(t_out):
                                out[b, f, c, t] += x[b, c, t + k] * wfk
        else:
            for b in range(batch):
                for c in range(channels):
                    for f in range(filters):
                        for k in range(kernel):
                            wfk = w[f, k]
                            for t in range(t_out):
                                out[b, f, c, t] += x[b, c, t * stride + k] * wfk
    return out_arr


def conv1d_backward_w(double[:, :, :, ::1] grad, double[:, :, ::1] x, int stride, int kernel):
    cdef Py_ssize_t batch = grad.shape[0], filters = grad.shape[1]
    cdef Py_ssize_t channels = grad.shape[2], t_out = grad.shape[3]
    dw_arr = np.zeros((filters, kernel), dtype=np.float64)
    cdef double[:, ::1] dw = dw_arr
    cdef Py_ssize_t b, f, c, t, k
    cdef double g
    with nogil:
        if stride == 1:
            for b in range(batch):
                for c in range(channels):
                    for f in range(filters):
                        for t in range(t_out):
                            g = grad[b, f, c, t]
                            for k in range(kernel):
                                dw[f, k] += g * x[b, c, t + k]
        else:
            for b in range(batch):
                for c in range(channels):
                    for f in range(filters):
                        for t in range(t_out):
                            g = grad[b, f, c, t]
                            for k in range(kernel):
                                dw[f, k] += g * x[b, c, t * stride + k]
    return dw_arr


def conv1d_backward_x(double[:, :, :, ::1] grad, double[:, ::1] w, int stride, int t_in):
    cdef Py_ssize_t batch = grad.shape[0], filters = grad.shape[1]
    cdef Py_ssize_t channels = grad.shape[2], t_out = grad.shape[3]
    cdef Py_ssize_t kernel = w.shape[1]
    dx_arr = np.zeros((batch, channels, t_in), dtype=np.float64)
    cdef double[:, :, ::1] dx = dx_arr
    cdef Py_ssize_t b, f, c, t, k
    cdef double wfk
    with nogil:
        if stride == 1:
            for b in range(batch):
                for c in range(channels):
                    for f in range(filters):
                        for k in range(kernel):
                            wfk = w[f, k]
                            for t in range(t_out):
                                dx[b, c, t + k] += grad[b, f, c, t] * wfk
        else:
            for b in range(batch):
                for c in range(channels):
                    for f in range(filters):
                        for k in range(kernel):
                            wfk = w[f, k]
                            for t in range(t_out):
                                dx[b, c, t * stride + k] += grad[b, f, c, t] * wfk
    return dx_arr


def elu_forward(double[::1] x):
    """Returns (elu(x), slope) over a flat array; slope is exp(x) on x<=0, 1 above."""
    cdef Py_ssize_t n = x.shape[0], i
    out_arr = np.empty(n, dtype=np.float64)
    slope_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr, slope = slope_arr
    cdef double v, e
    with nogil:
        for i in range(n):
            v = x[i]
            if v > 0.0:
                out[i] = v
                slope[i] = 1.0
            else:
                e = exp(v)
                out[i] = e - 1.0
                slope[i] = e
    return out_arr, slope_arr


def mix_forward(double[:, :, :, ::1] x, double[:, ::1] w):
    """Channel mix: out[b,f,s,t] = sum_c w[s,c] * x[b,f,c,t]."""
    cdef Py_ssize_t batch = x.shape[0], filters = x.shape[1]
    cdef Py_ssize_t channels = x.shape[2], t_len = x.shape[3]
    cdef Py_ssize_t spatial = w.shape[0]
    out_arr = np.zeros((batch, filters, spatial, t_len), dtype=np.float64)
    cdef double[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t b, f, s, c, t
    cdef double wsc
    with nogil:
        for b in range(batch):
            for f in range(filters):
                for s in range(spatial):
                    for c in range(channels):
                        wsc = w[s, c]
                        for t in range(t_len):
                            out[b, f, s, t] += x[b, f, c, t] * wsc
    return out_arr


def mix_backward_x(double[:, :, :, ::1] grad, double[:, ::1] w, Py_ssize_t channels):
    """dx[b,f,c,t] = sum_s w[s,c] * grad[b,f,s,t]."""
    cdef Py_ssize_t batch = grad.shape[0], filters = grad.shape[1]
    cdef Py_ssize_t spatial = grad.shape[2], t_len = grad.shape[3]
    dx_arr = np.zeros((batch, filters, channels, t_len), dtype=np.float64)
    cdef double[:, :, :, ::1] dx = dx_arr
    cdef Py_ssize_t b, f, s, c, t
    cdef double wsc
    with nogil:
        for b in range(batch):
            for f in range(filters):
                for c in range(channels):
                    for s in range(spatial):
                        wsc = w[s, c]
                        for t in range(t_len):
                            dx[b, f, c, t] += grad[b, f, s, t] * wsc
    return dx_arr


def mix_backward_w(double[:, :, :, ::1] grad, double[:, :, :, ::1] x, Py_ssize_t spatial):
    """dw[s,c] = sum_{b,f,t} grad[b,f,s,t] * x[b,f,c,t]."""
    cdef Py_ssize_t batch = grad.shape[0], filters = grad.shape[1]
    cdef Py_ssize_t channels = x.shape[2], t_len = grad.shape[3]
    dw_arr = np.zeros((spatial, channels), dtype=np.float64)
    cdef double[:, ::1] dw = dw_arr
    cdef Py_ssize_t b, f, s, c, t
    cdef double acc
    with nogil:
        for b in range(batch):
            for f in range(filters):
                for s in range(spatial):
                    for c in range(channels):
                        acc = 0.0
                        for t in range(t_len):
                            acc += grad[b, f, s, t] * x[b, f, c, t]
                        dw[s, c] += acc
    return dw_arr


def fft_stages(double complex[:, ::1] z, double complex[::1] w):
    """Iterative DIT butterflies, in place; rows already bit-reverse permuted.

    w holds exp(-2j*pi*j/m) for j < m/2; stage `size` strides it by m/size.
    """
    cdef Py_ssize_t rows = z.shape[0], m = z.shape[1]
    cdef Py_ssize_t size = 2, half, step, r, base, j
    cdef double complex t
    with nogil:
        while size <= m:
            half = size // 2
            step = m // size
            for r in range(rows):
                base = 0
                while base < m:
                    for j in range(half):
                        t = z[r, base + half + j] * w[j * step]
                        z[r, base + half + j] = z[r, base + j] - t
                        z[r, base + j] = z[r, base + j] + t
                    base += size
            size *= 2

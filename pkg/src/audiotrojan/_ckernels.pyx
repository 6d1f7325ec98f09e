# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops. Contracts match ``_pykernels`` exactly."""

import numpy as np
cimport numpy as cnp
from libc.math cimport cos, sin, floor, M_PI

cnp.import_array()


def pv_stretch(const double[:, ::1] mag, const double[:, ::1] phase,
               const double[::1] time_steps, const double[::1] advance):
    cdef Py_ssize_t n_frames = mag.shape[0]
    cdef Py_ssize_t n_bins = mag.shape[1]
    cdef Py_ssize_t n_out = time_steps.shape[0]
    cdef double two_pi = 2.0 * M_PI
    out_arr = np.empty((n_out, n_bins), dtype=np.complex128)
    acc_arr = np.array(phase[0], dtype=np.float64, copy=True)
    cdef double complex[:, ::1] out = out_arr
    cdef double[::1] acc = acc_arr
    cdef Py_ssize_t t, k, i, j
    cdef double step, alpha, m, m0, m1, p0, p1, d
    for t in range(n_out):
        step = time_steps[t]
        i = <Py_ssize_t>floor(step)
        alpha = step - i
        j = i + 1
        for k in range(n_bins):
            m0 = mag[i, k]
            p0 = phase[i, k]
            if j < n_frames:
                m1 = mag[j, k]
                p1 = phase[j, k]
            else:
                m1 = 0.0
                p1 = 0.0
            m = (1.0 - alpha) * m0 + alpha * m1
            out[t, k].real = m * cos(acc[k])
            out[t, k].imag = m * sin(acc[k])
            d = p1 - p0 - advance[k]
            d = d - two_pi * floor(d / two_pi + 0.5)
            acc[k] = acc[k] + advance[k] + d
    return out_arr


def overlap_add(const double[:, ::1] frames, const double[::1] window, Py_ssize_t hop):
    cdef Py_ssize_t n_frames = frames.shape[0]
    cdef Py_ssize_t n = frames.shape[1]
    cdef Py_ssize_t total = (n_frames - 1) * hop + n
    y_arr = np.zeros(total, dtype=np.float64)
    w_arr = np.zeros(total, dtype=np.float64)
    cdef double[::1] y = y_arr
    cdef double[::1] wsum = w_arr
    cdef Py_ssize_t t, k, start
    for t in range(n_frames):
        start = t * hop
        for k in range(n):
            y[start + k] += frames[t, k] * window[k]
            wsum[start + k] += window[k] * window[k]
    return y_arr, w_arr


def max_window_start(const double[::1] magnitude, Py_ssize_t length):
    cdef Py_ssize_t n = magnitude.shape[0]
    cdef Py_ssize_t n_windows = n - length + 1
    cum_arr = np.empty(n + 1, dtype=np.float64)
    cdef double[::1] cum = cum_arr
    cdef Py_ssize_t i
    cdef double s, best, tol
    cum[0] = 0.0
    for i in range(n):
        cum[i + 1] = cum[i] + magnitude[i]
    best = cum[length] - cum[0]
    for i in range(1, n_windows):
        s = cum[i + length] - cum[i]
        if s > best:
            best = s
    tol = 2.0 * (n + 1) * 2.220446049250313e-16 * cum[n]
    for i in range(n_windows):
        if cum[i + length] - cum[i] >= best - tol:
            return i
    return 0

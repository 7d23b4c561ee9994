# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled per-step kernels; see ``_pykernels`` for the reference versions."""
import numpy as np


def penalties(const double[:, :] P, history):
    cdef Py_ssize_t n = P.shape[0]
    cdef Py_ssize_t i, h
    out = np.zeros(n)
    cdef double[:] o = out
    for hh in history:
        h = hh
        for i in range(n):
            o[i] += P[i, h]
    return out


def masked_argmin(const double[:] values, const double[:] buffers):
    cdef Py_ssize_t i, best = -1
    cdef double v = 0.0
    for i in range(values.shape[0]):
        if buffers[i] > 0 and (best < 0 or values[i] < v):
            best = i
            v = values[i]
    return best


def masked_argmax(const double[:] values, const double[:] buffers):
    cdef Py_ssize_t i, best = -1
    cdef double v = 0.0
    for i in range(values.shape[0]):
        if buffers[i] > 0 and (best < 0 or values[i] > v):
            best = i
            v = values[i]
    return best


def serve(double[:] buffers, const double[:] weights, Py_ssize_t user):
    cdef double b = buffers[user] - weights[user]
    buffers[user] = b if b > 0.0 else 0.0


cdef inline double _clip(double x, double lo, double hi) nogil:
    if x < lo:
        return lo
    if x > hi:
        return hi
    return x


def apply_drift(double[:] w, double[:, :] P, const double[:] xi_w,
                const double[:, :] xi_p, double sigma_w, double sigma_p,
                double w_min, double w_max, double p_max):
    cdef Py_ssize_t n = w.shape[0]
    cdef Py_ssize_t i, j
    if sigma_w > 0:
        for i in range(n):
            w[i] = _clip(w[i] + sigma_w * xi_w[i], w_min, w_max)
    if sigma_p > 0:
        for i in range(n):
            for j in range(n):
                if i == j:
                    P[i, j] = 0.0
                else:
                    P[i, j] = _clip(P[i, j] + sigma_p * xi_p[i, j], 0.0, p_max)

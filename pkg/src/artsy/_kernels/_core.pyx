# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernel core. Semantics mirror pykernels.py exactly."""

import numpy as np

from libc.math cimport exp, log, sqrt
from libc.stdint cimport int64_t

SIG_LO = 1e-300
SIG_HI = 1.0 - 1e-16

cdef double C_SIG_LO = 1e-300
cdef double C_SIG_HI = 1.0 - 1e-16


def matmul(const double[:, ::1] a, const double[:, ::1] b):
    cdef Py_ssize_t m = a.shape[0], k = a.shape[1], n = b.shape[1]
    out_arr = np.zeros((m, n), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j, l
    cdef double a_il
    for i in range(m):
        for l in range(k):
            a_il = a[i, l]
            for j in range(n):
                out[i, j] += a_il * b[l, j]
    return out_arr


def matmul_nt(const double[:, ::1] a, const double[:, ::1] b):
    """a @ b.T"""
    cdef Py_ssize_t m = a.shape[0], k = a.shape[1], n = b.shape[0]
    out_arr = np.empty((m, n), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j, l
    cdef double acc
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for l in range(k):
                acc += a[i, l] * b[j, l]
            out[i, j] = acc
    return out_arr


def matmul_tn(const double[:, ::1] a, const double[:, ::1] b):
    """a.T @ b"""
    cdef Py_ssize_t k = a.shape[0], m = a.shape[1], n = b.shape[1]
    out_arr = np.zeros((m, n), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j, l
    cdef double a_li
    for l in range(k):
        for i in range(m):
            a_li = a[l, i]
            for j in range(n):
                out[i, j] += a_li * b[l, j]
    return out_arr


def relu(const double[:, ::1] x):
    cdef Py_ssize_t m = x.shape[0], n = x.shape[1]
    out_arr = np.empty((m, n), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j
    for i in range(m):
        for j in range(n):
            out[i, j] = x[i, j] if x[i, j] > 0.0 else 0.0
    return out_arr


def relu_grad(const double[:, ::1] x, const double[:, ::1] g):
    cdef Py_ssize_t m = x.shape[0], n = x.shape[1]
    out_arr = np.empty((m, n), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j
    for i in range(m):
        for j in range(n):
            out[i, j] = g[i, j] if x[i, j] > 0.0 else 0.0
    return out_arr


def sigmoid(const double[:, ::1] x):
    cdef Py_ssize_t m = x.shape[0], n = x.shape[1]
    out_arr = np.empty((m, n), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j
    cdef double v, e
    for i in range(m):
        for j in range(n):
            v = x[i, j]
            if v >= 0.0:
                e = 1.0 / (1.0 + exp(-v))
            else:
                e = exp(v)
                e = e / (1.0 + e)
            if e < C_SIG_LO:
                e = C_SIG_LO
            elif e > C_SIG_HI:
                e = C_SIG_HI
            out[i, j] = e
    return out_arr


def sigmoid_grad(const double[:, ::1] y, const double[:, ::1] g):
    cdef Py_ssize_t m = y.shape[0], n = y.shape[1]
    out_arr = np.empty((m, n), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j
    for i in range(m):
        for j in range(n):
            out[i, j] = g[i, j] * y[i, j] * (1.0 - y[i, j])
    return out_arr


def add_bias(const double[:, ::1] x, const double[:, ::1] b):
    cdef Py_ssize_t m = x.shape[0], n = x.shape[1]
    out_arr = np.empty((m, n), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j
    for i in range(m):
        for j in range(n):
            out[i, j] = x[i, j] + b[0, j]
    return out_arr


def l2rows(const double[:, ::1] x, double eps):
    """Row-wise unit vectors; returns (x / norms, norms) with norms >= eps."""
    cdef Py_ssize_t m = x.shape[0], n = x.shape[1]
    out_arr = np.empty((m, n), dtype=np.float64)
    norms_arr = np.empty((m, 1), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double[:, ::1] norms = norms_arr
    cdef Py_ssize_t i, j
    cdef double acc
    for i in range(m):
        acc = 0.0
        for j in range(n):
            acc += x[i, j] * x[i, j]
        acc = sqrt(acc)
        if acc < eps:
            acc = eps
        norms[i, 0] = acc
        for j in range(n):
            out[i, j] = x[i, j] / acc
    return out_arr, norms_arr


def l2rows_grad(const double[:, ::1] unit, const double[:, ::1] norms,
                const double[:, ::1] g, double eps):
    """d(x/|x|)/dx times upstream: project g off the unit row, divide by norm.

    Rows whose norm hit the eps clamp were divided by the constant eps, so
    their exact gradient is plain g / eps (no projection term).
    """
    cdef Py_ssize_t m = unit.shape[0], n = unit.shape[1]
    out_arr = np.empty((m, n), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j
    cdef double dot
    for i in range(m):
        if norms[i, 0] <= eps:
            for j in range(n):
                out[i, j] = g[i, j] / eps
            continue
        dot = 0.0
        for j in range(n):
            dot += g[i, j] * unit[i, j]
        for j in range(n):
            out[i, j] = (g[i, j] - unit[i, j] * dot) / norms[i, 0]
    return out_arr


def bias_grad(const double[:, ::1] g):
    cdef Py_ssize_t m = g.shape[0], n = g.shape[1]
    out_arr = np.zeros((1, n), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j
    for i in range(m):
        for j in range(n):
            out[0, j] += g[i, j]
    return out_arr


def softmax_xent(const double[:, ::1] logits, const int64_t[::1] labels):
    cdef Py_ssize_t m = logits.shape[0], n = logits.shape[1]
    probs_arr = np.empty((m, n), dtype=np.float64)
    cdef double[:, ::1] probs = probs_arr
    cdef Py_ssize_t i, j
    cdef double mx, denom, shifted, loss = 0.0
    for i in range(m):
        mx = logits[i, 0]
        for j in range(1, n):
            if logits[i, j] > mx:
                mx = logits[i, j]
        denom = 0.0
        for j in range(n):
            shifted = exp(logits[i, j] - mx)
            probs[i, j] = shifted
            denom += shifted
        for j in range(n):
            probs[i, j] /= denom
        loss += log(denom) - (logits[i, labels[i]] - mx)
    return loss / m, probs_arr


def softmax_xent_grad(const double[:, ::1] probs, const int64_t[::1] labels, double scale):
    cdef Py_ssize_t m = probs.shape[0], n = probs.shape[1]
    out_arr = np.empty((m, n), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j
    for i in range(m):
        for j in range(n):
            out[i, j] = probs[i, j] * scale
        out[i, labels[i]] -= scale
    return out_arr


def bce(const double[:, ::1] scores, const double[::1] labels, double eps):
    cdef Py_ssize_t m = scores.shape[0]
    clamped_arr = np.empty((m, 1), dtype=np.float64)
    cdef double[:, ::1] clamped = clamped_arr
    cdef Py_ssize_t i
    cdef double s, loss = 0.0
    for i in range(m):
        s = scores[i, 0]
        if s < eps:
            s = eps
        elif s > 1.0 - eps:
            s = 1.0 - eps
        clamped[i, 0] = s
        loss -= labels[i] * log(s) + (1.0 - labels[i]) * log(1.0 - s)
    return loss / m, clamped_arr


def bce_grad(const double[:, ::1] clamped, const double[::1] labels, double scale):
    cdef Py_ssize_t m = clamped.shape[0]
    out_arr = np.empty((m, 1), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i
    for i in range(m):
        out[i, 0] = scale * (-labels[i] / clamped[i, 0] + (1.0 - labels[i]) / (1.0 - clamped[i, 0]))
    return out_arr


def sgd_update(double[:, ::1] param, const double[:, ::1] grad, double[:, ::1] vel,
               double lr, double momentum, double weight_decay):
    """In-place momentum step: v = mu*v + g + wd*p; p -= lr*v."""
    cdef Py_ssize_t m = param.shape[0], n = param.shape[1]
    cdef Py_ssize_t i, j
    cdef double g
    for i in range(m):
        for j in range(n):
            g = grad[i, j] + weight_decay * param[i, j]
            vel[i, j] = momentum * vel[i, j] + g
            param[i, j] -= lr * vel[i, j]

# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: elastic-net coordinate descent and fused LSTM gate math."""
from libc.math cimport exp, fabs, sqrt, tanh

import numpy as np


cdef inline double _sigmoid(double x) nogil:
    cdef double z
    if x >= 0:
        return 1.0 / (1.0 + exp(-x))
    z = exp(x)
    return z / (1.0 + z)


cdef inline double _soft(double x, double t) nogil:
    if x > t:
        return x - t
    if x < -t:
        return x + t
    return 0.0


def enet_coordinate_descent(double[::1] w, double[::1, :] X, double[::1] y,
                            double alpha, double l1_ratio, int max_iter,
                            double tol):
    cdef Py_ssize_t n = X.shape[0], p = X.shape[1]
    cdef Py_ssize_t i, j
    cdef int it, n_iter = 0
    cdef double l1 = alpha * l1_ratio, l2 = alpha * (1.0 - l1_ratio)
    cdef double rho, w_old, w_new, d, max_dw, max_w
    cdef double[::1] norms = np.empty(p)
    cdef double[::1] r = np.empty(n)

    with nogil:
        for j in range(p):
            d = 0.0
            for i in range(n):
                d = d + X[i, j] * X[i, j]
            norms[j] = d / n
        for i in range(n):
            r[i] = y[i]
        for j in range(p):
            if w[j] != 0.0:
                for i in range(n):
                    r[i] = r[i] - X[i, j] * w[j]

        for it in range(max_iter):
            max_dw = 0.0
            max_w = 0.0
            for j in range(p):
                if norms[j] == 0.0:
                    continue
                w_old = w[j]
                rho = 0.0
                for i in range(n):
                    rho = rho + X[i, j] * r[i]
                rho = rho / n + norms[j] * w_old
                w_new = _soft(rho, l1) / (norms[j] + l2)
                d = w_new - w_old
                if d != 0.0:
                    for i in range(n):
                        r[i] = r[i] - X[i, j] * d
                    w[j] = w_new
                if fabs(d) > max_dw:
                    max_dw = fabs(d)
                if fabs(w_new) > max_w:
                    max_w = fabs(w_new)
            n_iter = it + 1
            if max_dw <= tol * (max_w if max_w > 1.0 else 1.0):
                break
    return np.asarray(w), n_iter


def lstm_gates_forward(double[:, ::1] z, double[:, ::1] c_prev,
                       double[:, ::1] c_out, double[:, ::1] h_out,
                       double[:, ::1] tanh_c_out):
    """Activate pre-activations ``z`` in place and advance the cell."""
    cdef Py_ssize_t n = z.shape[0], H = c_prev.shape[1]
    cdef Py_ssize_t r, k
    cdef double ig, fg, gg, og, c
    with nogil:
        for r in range(n):
            for k in range(H):
                ig = _sigmoid(z[r, k])
                fg = _sigmoid(z[r, H + k])
                gg = tanh(z[r, 2 * H + k])
                og = _sigmoid(z[r, 3 * H + k])
                z[r, k] = ig
                z[r, H + k] = fg
                z[r, 2 * H + k] = gg
                z[r, 3 * H + k] = og
                c = fg * c_prev[r, k] + ig * gg
                c_out[r, k] = c
                tanh_c_out[r, k] = tanh(c)
                h_out[r, k] = og * tanh_c_out[r, k]


def lstm_gates_backward(double[:, ::1] gates, double[:, ::1] c_prev,
                        double[:, ::1] tanh_c, double[:, ::1] dh,
                        double[:, ::1] dc, double[:, ::1] dz_out,
                        double[:, ::1] dc_prev_out):
    cdef Py_ssize_t n = gates.shape[0], H = c_prev.shape[1]
    cdef Py_ssize_t r, k
    cdef double ig, fg, gg, og, tc, dct
    with nogil:
        for r in range(n):
            for k in range(H):
                ig = gates[r, k]
                fg = gates[r, H + k]
                gg = gates[r, 2 * H + k]
                og = gates[r, 3 * H + k]
                tc = tanh_c[r, k]
                dct = dc[r, k] + dh[r, k] * og * (1.0 - tc * tc)
                dz_out[r, k] = dct * gg * ig * (1.0 - ig)
                dz_out[r, H + k] = dct * c_prev[r, k] * fg * (1.0 - fg)
                dz_out[r, 2 * H + k] = dct * ig * (1.0 - gg * gg)
                dz_out[r, 3 * H + k] = dh[r, k] * tc * og * (1.0 - og)
                dc_prev_out[r, k] = dct * fg

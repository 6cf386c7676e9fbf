# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""C implementation of the element kernels in ``_kernels_py``.

Same signatures and results (up to rounding); one pass over the cells with
no temporaries.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport pow

cnp.import_array()


cdef inline double _flux_factor(double s, double p) nogil:
    if s > 0.0:
        return pow(s, 0.5 * p - 1.0)
    return 1.0 if p == 2.0 else 0.0


def cell_gradients(const double[:, :, ::1] G, const long[:, ::1] tri, const double[::1] u):
    cdef Py_ssize_t T = G.shape[0], t, k
    out = np.zeros((T, 2))
    cdef double[:, ::1] g = out
    cdef double uk
    with nogil:
        for t in range(T):
            for k in range(3):
                uk = u[tri[t, k]]
                g[t, 0] += uk * G[t, k, 0]
                g[t, 1] += uk * G[t, k, 1]
    return out


def energy(const double[:, :, ::1] G, const double[::1] area, const long[:, ::1] tri,
           const double[::1] u, const double[::1] sigma, const double[:, :, ::1] A,
           double p, double eps):
    cdef Py_ssize_t T = G.shape[0], t, k
    cdef double g0, g1, uk, s, total = 0.0
    with nogil:
        for t in range(T):
            g0 = 0.0
            g1 = 0.0
            for k in range(3):
                uk = u[tri[t, k]]
                g0 = g0 + uk * G[t, k, 0]
                g1 = g1 + uk * G[t, k, 1]
            s = eps * eps + A[t, 0, 0] * g0 * g0 + (A[t, 0, 1] + A[t, 1, 0]) * g0 * g1 + A[t, 1, 1] * g1 * g1
            if s < 0.0:
                s = 0.0
            total = total + sigma[t] * pow(s, 0.5 * p) * area[t]
    return total


def energy_and_residual(const double[:, :, ::1] G, const double[::1] area, const long[:, ::1] tri,
                        const double[::1] u, const double[::1] sigma, const double[:, :, ::1] A,
                        double p, double eps):
    cdef Py_ssize_t T = G.shape[0], t, k
    out = np.empty((T, 3))
    cdef double[:, ::1] r = out
    cdef double g0, g1, a0, a1, uk, s, w, total = 0.0
    with nogil:
        for t in range(T):
            g0 = 0.0
            g1 = 0.0
            for k in range(3):
                uk = u[tri[t, k]]
                g0 = g0 + uk * G[t, k, 0]
                g1 = g1 + uk * G[t, k, 1]
            a0 = A[t, 0, 0] * g0 + A[t, 0, 1] * g1
            a1 = A[t, 1, 0] * g0 + A[t, 1, 1] * g1
            s = eps * eps + g0 * a0 + g1 * a1
            if s < 0.0:
                s = 0.0
            total = total + sigma[t] * pow(s, 0.5 * p) * area[t]
            w = sigma[t] * p * _flux_factor(s, p) * area[t]
            for k in range(3):
                r[t, k] = w * (a0 * G[t, k, 0] + a1 * G[t, k, 1])
    return total, out


def local_hessians(const double[:, :, ::1] G, const double[::1] area, const long[:, ::1] tri,
                   const double[::1] u, const double[::1] sigma, const double[:, :, ::1] A,
                   double p, double eps):
    cdef Py_ssize_t T = G.shape[0], t, k, l
    out = np.empty((T, 3, 3))
    cdef double[:, :, ::1] H = out
    cdef double g0, g1, a0, a1, uk, s, c1, c2, h00, h01, h10, h11, x0, x1
    with nogil:
        for t in range(T):
            g0 = 0.0
            g1 = 0.0
            for k in range(3):
                uk = u[tri[t, k]]
                g0 = g0 + uk * G[t, k, 0]
                g1 = g1 + uk * G[t, k, 1]
            a0 = A[t, 0, 0] * g0 + A[t, 0, 1] * g1
            a1 = A[t, 1, 0] * g0 + A[t, 1, 1] * g1
            s = eps * eps + g0 * a0 + g1 * a1
            c1 = sigma[t] * p * _flux_factor(s, p) * area[t]
            if s > 0.0:
                c2 = sigma[t] * p * (p - 2.0) * pow(s, 0.5 * p - 2.0) * area[t]
            else:
                c2 = 0.0
            h00 = c1 * A[t, 0, 0] + c2 * a0 * a0
            h01 = c1 * A[t, 0, 1] + c2 * a0 * a1
            h10 = c1 * A[t, 1, 0] + c2 * a1 * a0
            h11 = c1 * A[t, 1, 1] + c2 * a1 * a1
            for k in range(3):
                x0 = G[t, k, 0] * h00 + G[t, k, 1] * h10
                x1 = G[t, k, 0] * h01 + G[t, k, 1] * h11
                for l in range(3):
                    H[t, k, l] = x0 * G[t, l, 0] + x1 * G[t, l, 1]
    return out

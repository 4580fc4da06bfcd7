# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled Matérn covariance kernels (half-integer smoothness) and distances."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, sqrt

cnp.import_array()


def pairwise_dist(const double[:, ::1] X1, const double[:, ::1] X2):
    cdef Py_ssize_t n = X1.shape[0], m = X2.shape[0], D = X1.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double acc, diff
    out = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] R = out
    with nogil:
        for i in range(n):
            for j in range(m):
                acc = 0.0
                for k in range(D):
                    diff = X1[i, k] - X2[j, k]
                    acc = acc + diff * diff
                R[i, j] = sqrt(acc)
    return out


def cross_halfint(const double[:, ::1] X1, const double[:, ::1] X2,
                  double h2, double scale, int order):
    """h2 * poly_order(z) * exp(-z) with z = scale * |x1 - x2|; order = nu - 1/2."""
    cdef Py_ssize_t n = X1.shape[0], m = X2.shape[0], D = X1.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double acc, diff, z, poly
    out = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] C = out
    with nogil:
        for i in range(n):
            for j in range(m):
                acc = 0.0
                for k in range(D):
                    diff = X1[i, k] - X2[j, k]
                    acc = acc + diff * diff
                z = scale * sqrt(acc)
                if order == 0:
                    poly = 1.0
                elif order == 1:
                    poly = 1.0 + z
                else:
                    poly = 1.0 + z + z * z / 3.0
                C[i, j] = h2 * poly * exp(-z)
    return out


def gram_halfint(const double[:, ::1] X, double h2, double scale, int order):
    """cross_halfint(X, X, ...) computed over the upper triangle and mirrored."""
    cdef Py_ssize_t n = X.shape[0], D = X.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double acc, diff, z, poly
    out = np.empty((n, n), dtype=np.float64)
    cdef double[:, ::1] C = out
    with nogil:
        for i in range(n):
            C[i, i] = h2
            for j in range(i + 1, n):
                acc = 0.0
                for k in range(D):
                    diff = X[i, k] - X[j, k]
                    acc = acc + diff * diff
                z = scale * sqrt(acc)
                if order == 0:
                    poly = 1.0
                elif order == 1:
                    poly = 1.0 + z
                else:
                    poly = 1.0 + z + z * z / 3.0
                C[i, j] = h2 * poly * exp(-z)
                C[j, i] = C[i, j]
    return out

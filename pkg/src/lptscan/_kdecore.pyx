# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled Gaussian-kernel sums for the score transformation.

Both entry points return the raw sums

    S0(x) = sum_i exp(-u_i**2 / 2),   S1(x) = sum_i u_i * exp(-u_i**2 / 2),
    u_i = (r_i - x) / h

over a sorted sample ``r``. Normalisation into a density, its derivative
and the score happens in :mod:`lptscan.transforms`.
"""
import numpy as np

from libc.math cimport exp


cdef Py_ssize_t _upper(const double[::1] r, Py_ssize_t lo, Py_ssize_t n,
                       double value) noexcept nogil:
    # first index in [lo, n) with r[idx] > value
    cdef Py_ssize_t hi = n, mid
    while lo < hi:
        mid = (lo + hi) >> 1
        if r[mid] <= value:
            lo = mid + 1
        else:
            hi = mid
    return lo


cdef Py_ssize_t _lower(const double[::1] r, Py_ssize_t n,
                       double value) noexcept nogil:
    # first index with r[idx] >= value
    cdef Py_ssize_t lo = 0, hi = n, mid
    while lo < hi:
        mid = (lo + hi) >> 1
        if r[mid] < value:
            lo = mid + 1
        else:
            hi = mid
    return lo


def sums_at_sample(const double[::1] r, double h, double cutoff):
    """Kernel sums evaluated at every point of the sorted sample ``r``.

    Each pair (i, j) is visited once and credited to both ends. Pairs with
    ``|r_j - r_i| > cutoff * h`` are skipped; ``cutoff <= 0`` means the exact sum.
    """
    cdef Py_ssize_t n = r.shape[0]
    cdef Py_ssize_t i, j, jend
    cdef double invh = 1.0 / h
    cdef double reach = cutoff * h
    cdef bint exact = cutoff <= 0.0
    cdef double ri, u, e, s0, s1
    out0 = np.zeros(n, dtype=np.float64)
    out1 = np.zeros(n, dtype=np.float64)
    cdef double[::1] S0 = out0
    cdef double[::1] S1 = out1
    with nogil:
        for i in range(n):
            ri = r[i]
            if exact:
                jend = n
            else:
                jend = _upper(r, i + 1, n, ri + reach)
            s0 = 1.0
            s1 = 0.0
            for j in range(i + 1, jend):
                u = (r[j] - ri) * invh
                e = exp(-0.5 * u * u)
                s0 = s0 + e
                s1 = s1 + e * u
                S0[j] += e
                S1[j] -= e * u
            S0[i] += s0
            S1[i] += s1
    return out0, out1


def sums_at_points(const double[::1] r, const double[::1] x, double h,
                   double cutoff):
    """Kernel sums at arbitrary query points ``x`` over the sorted sample ``r``.

    Same cutoff convention as :func:`sums_at_sample`.
    """
    cdef Py_ssize_t n = r.shape[0]
    cdef Py_ssize_t m = x.shape[0]
    cdef Py_ssize_t k, i, lo, hi
    cdef double invh = 1.0 / h
    cdef double reach = cutoff * h
    cdef bint exact = cutoff <= 0.0
    cdef double xk, u, e, s0, s1
    out0 = np.empty(m, dtype=np.float64)
    out1 = np.empty(m, dtype=np.float64)
    cdef double[::1] S0 = out0
    cdef double[::1] S1 = out1
    with nogil:
        for k in range(m):
            xk = x[k]
            if exact:
                lo = 0
                hi = n
            else:
                lo = _lower(r, n, xk - reach)
                hi = _upper(r, lo, n, xk + reach)
            s0 = 0.0
            s1 = 0.0
            for i in range(lo, hi):
                u = (r[i] - xk) * invh
                e = exp(-0.5 * u * u)
                s0 = s0 + e
                s1 = s1 + e * u
            S0[k] = s0
            S1[k] = s1
    return out0, out1

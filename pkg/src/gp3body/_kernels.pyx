# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled pairwise kernel sums.

The hot loop of the whole artifact: accumulate sums of the form

    out[t, r] = sum_s dens[s, r] * |u_t - u_s|^(-p)

over scattered target points, where u are points already mapped to metric
coordinates and p is 4 (six dimensions) or 7 (nine dimensions).  Each output
row is a serial sum owned by one OpenMP thread, so results are bit-identical
for any thread count.
"""

import numpy as np

cimport cython
from cython.parallel cimport prange
from libc.math cimport sqrt


def backend_name():
    return "compiled"


def sum_inv_r4_6d(double[:, ::1] targets, double[:, ::1] sources,
                  double[:, ::1] dens, long[::1] self_idx=None, int workers=1):
    """out[t,r] = sum_s dens[s,r] / |targets[t]-sources[s]|^4, skipping s == self_idx[t]."""
    cdef Py_ssize_t T = targets.shape[0]
    cdef Py_ssize_t S = sources.shape[0]
    cdef Py_ssize_t R = dens.shape[1]
    if sources.shape[1] != 6 or targets.shape[1] != 6:
        raise ValueError("expected 6-dimensional points")
    if dens.shape[0] != S:
        raise ValueError("density rows must match source count")
    out_arr = np.zeros((T, R), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t t, s, r
    cdef long skip
    cdef double d0, d1, d2, d3, d4, d5, q, k
    cdef double t0, t1, t2, t3, t4, t5
    cdef bint have_self = self_idx is not None
    cdef int nw = workers if workers > 0 else 1

    for t in prange(T, nogil=True, schedule='static', num_threads=nw):
        skip = self_idx[t] if have_self else -1
        t0 = targets[t, 0]; t1 = targets[t, 1]; t2 = targets[t, 2]
        t3 = targets[t, 3]; t4 = targets[t, 4]; t5 = targets[t, 5]
        for s in range(S):
            if s == skip:
                continue
            d0 = t0 - sources[s, 0]
            d1 = t1 - sources[s, 1]
            d2 = t2 - sources[s, 2]
            d3 = t3 - sources[s, 3]
            d4 = t4 - sources[s, 4]
            d5 = t5 - sources[s, 5]
            q = d0 * d0 + d1 * d1 + d2 * d2 + d3 * d3 + d4 * d4 + d5 * d5
            k = 1.0 / (q * q)
            for r in range(R):
                out[t, r] += k * dens[s, r]
    return out_arr


def sum_inv_r7_9d(double[:, ::1] targets, double[:, ::1] sources,
                  double[:, ::1] dens, long[::1] self_idx=None, int workers=1):
    """out[t,r] = sum_s dens[s,r] / |targets[t]-sources[s]|^7, skipping s == self_idx[t]."""
    cdef Py_ssize_t T = targets.shape[0]
    cdef Py_ssize_t S = sources.shape[0]
    cdef Py_ssize_t R = dens.shape[1]
    if sources.shape[1] != 9 or targets.shape[1] != 9:
        raise ValueError("expected 9-dimensional points")
    if dens.shape[0] != S:
        raise ValueError("density rows must match source count")
    out_arr = np.zeros((T, R), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t t, s, r
    cdef long skip
    cdef double q, k
    cdef double d0, d1, d2, d3, d4, d5, d6, d7, d8
    cdef double t0, t1, t2, t3, t4, t5, t6, t7, t8
    cdef bint have_self = self_idx is not None
    cdef int nw = workers if workers > 0 else 1

    for t in prange(T, nogil=True, schedule='static', num_threads=nw):
        skip = self_idx[t] if have_self else -1
        t0 = targets[t, 0]; t1 = targets[t, 1]; t2 = targets[t, 2]
        t3 = targets[t, 3]; t4 = targets[t, 4]; t5 = targets[t, 5]
        t6 = targets[t, 6]; t7 = targets[t, 7]; t8 = targets[t, 8]
        for s in range(S):
            if s == skip:
                continue
            d0 = t0 - sources[s, 0]
            d1 = t1 - sources[s, 1]
            d2 = t2 - sources[s, 2]
            d3 = t3 - sources[s, 3]
            d4 = t4 - sources[s, 4]
            d5 = t5 - sources[s, 5]
            d6 = t6 - sources[s, 6]
            d7 = t7 - sources[s, 7]
            d8 = t8 - sources[s, 8]
            q = (d0 * d0 + d1 * d1 + d2 * d2 + d3 * d3 + d4 * d4
                 + d5 * d5 + d6 * d6 + d7 * d7 + d8 * d8)
            k = 1.0 / (q * q * q * sqrt(q))
            for r in range(R):
                out[t, r] += k * dens[s, r]
    return out_arr

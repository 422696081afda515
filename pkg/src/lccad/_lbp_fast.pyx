# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled max-product message passing kernel.

Mirrors lccad._lbp_ref.run_max_product operation for operation, in the
same order, so results are bitwise identical to the pure-numpy fallback.
See that module for the message layout contract.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()

__all__ = ["run_max_product"]


def run_max_product(node_pot, edge_pot, src, dst, int max_iters, double damping,
                    double tol, bint normalize):
    node_arr = np.ascontiguousarray(node_pot, dtype=np.float64)
    pot_arr = np.ascontiguousarray(edge_pot, dtype=np.float64)
    src_arr = np.ascontiguousarray(src, dtype=np.int32)
    dst_arr = np.ascontiguousarray(dst, dtype=np.int32)

    cdef const double[:, ::1] theta = node_arr
    cdef const double[:, ::1] pot = pot_arr
    cdef const int[::1] esrc = src_arr
    cdef const int[::1] edst = dst_arr

    cdef Py_ssize_t n = theta.shape[0]
    cdef Py_ssize_t K = theta.shape[1]
    cdef Py_ssize_t two_m = esrc.shape[0]
    cdef Py_ssize_t m = two_m // 2

    msg_arr = np.zeros((two_m, K))
    new_arr = np.zeros((two_m, K))
    base_arr = np.zeros((two_m, K))
    inc_arr = np.zeros((n, K))
    cdef double[:, ::1] msg = msg_arr
    cdef double[:, ::1] new = new_arr
    cdef double[:, ::1] base = base_arr
    cdef double[:, ::1] inc = inc_arr

    cdef Py_ssize_t e, i, s, t, rev, sweep
    cdef double best, val, delta, diff, mx
    cdef double keep = damping
    cdef double mix = 1.0 - damping
    cdef int iterations = 0
    cdef bint converged = False

    for sweep in range(max_iters):
        for i in range(n):
            for s in range(K):
                inc[i, s] = 0.0
        for e in range(two_m):
            i = edst[e]
            for s in range(K):
                inc[i, s] = inc[i, s] + msg[e, s]
        for e in range(two_m):
            i = esrc[e]
            rev = e + m if e < m else e - m
            for t in range(K):
                base[e, t] = (theta[i, t] + inc[i, t]) - msg[rev, t]
        delta = 0.0
        for e in range(two_m):
            for s in range(K):
                if e < m:
                    best = base[e, 0] + pot[0, s]
                    for t in range(1, K):
                        val = base[e, t] + pot[t, s]
                        if val > best:
                            best = val
                else:
                    best = base[e, 0] + pot[s, 0]
                    for t in range(1, K):
                        val = base[e, t] + pot[s, t]
                        if val > best:
                            best = val
                new[e, s] = keep * msg[e, s] + mix * best
            if normalize:
                mx = new[e, 0]
                for s in range(1, K):
                    if new[e, s] > mx:
                        mx = new[e, s]
                for s in range(K):
                    new[e, s] = new[e, s] - mx
            for s in range(K):
                diff = new[e, s] - msg[e, s]
                if diff < 0.0:
                    diff = -diff
                if diff > delta:
                    delta = diff
        for e in range(two_m):
            for s in range(K):
                msg[e, s] = new[e, s]
        iterations += 1
        if delta < tol:
            converged = True
            break

    for i in range(n):
        for s in range(K):
            inc[i, s] = 0.0
    for e in range(two_m):
        i = edst[e]
        for s in range(K):
            inc[i, s] = inc[i, s] + msg[e, s]
    beliefs = node_arr + inc_arr
    return msg_arr, beliefs, iterations, converged

# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops: exhaustive simple-path scans and edge-to-node maxima.

Signatures mirror :mod:`dglab._fallback` exactly.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport fabs

cnp.import_array()


def max_path_violation(const long[:] indptr, const long[:] indices, const long[:] eids,
                       const double[:] lengths, const double[:, :] U, const double[:, :] G,
                       long max_paths=-1):
    """Worst ``|u(x)-u(y)| - sum_e g(e) l(e)`` over every simple edge path.

    Returns ``(worst, n_paths, complete)`` where ``worst`` has one entry per
    row of ``U``; ``complete`` is False when ``max_paths`` stopped the scan.
    """
    cdef Py_ssize_t n = U.shape[1]
    cdef Py_ssize_t k = U.shape[0]
    cdef Py_ssize_t s, v, w, d, j, e, ptr
    cdef long n_paths = 0
    cdef bint complete = True
    cdef double viol

    worst_arr = np.full(k, -np.inf)
    cdef double[:] worst = worst_arr
    # cum[d, j]: path weight of function j at depth d
    cum_arr = np.zeros((n + 1, k))
    cdef double[:, :] cum = cum_arr
    stack_node_arr = np.zeros(n + 1, dtype=np.int64)
    stack_ptr_arr = np.zeros(n + 1, dtype=np.int64)
    visited_arr = np.zeros(n, dtype=np.uint8)
    cdef long[:] stack_node = stack_node_arr
    cdef long[:] stack_ptr = stack_ptr_arr
    cdef unsigned char[:] visited = visited_arr

    for s in range(n):
        if not complete:
            break
        d = 0
        stack_node[0] = s
        stack_ptr[0] = indptr[s]
        visited[s] = 1
        for j in range(k):
            cum[0, j] = 0.0
        while d >= 0:
            v = stack_node[d]
            ptr = stack_ptr[d]
            if ptr >= indptr[v + 1]:
                visited[v] = 0
                d -= 1
                continue
            stack_ptr[d] = ptr + 1
            w = indices[ptr]
            if visited[w]:
                continue
            e = eids[ptr]
            for j in range(k):
                cum[d + 1, j] = cum[d, j] + G[j, e] * lengths[e]
                viol = fabs(U[j, s] - U[j, w]) - cum[d + 1, j]
                if viol > worst[j]:
                    worst[j] = viol
            n_paths += 1
            if max_paths >= 0 and n_paths >= max_paths:
                complete = False
                visited[v] = 0
                for j in range(d + 1):
                    visited[stack_node[j]] = 0
                break
            d += 1
            stack_node[d] = w
            stack_ptr[d] = indptr[w]
            visited[w] = 1
    return worst_arr, n_paths, complete


def node_max(const long[:] edge_a, const long[:] edge_b, const double[:, :] values, long n):
    """Per-node maximum of incident edge values for every row of ``values``."""
    cdef Py_ssize_t T = values.shape[0]
    cdef Py_ssize_t m = values.shape[1]
    cdef Py_ssize_t t, e
    cdef long a, b
    cdef double x
    out_arr = np.zeros((T, n))
    cdef double[:, :] out = out_arr
    for t in range(T):
        for e in range(m):
            x = values[t, e]
            a = edge_a[e]
            b = edge_b[e]
            if x > out[t, a]:
                out[t, a] = x
            if x > out[t, b]:
                out[t, b] = x
    return out_arr

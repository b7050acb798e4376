# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops: CSR propagation, fused PReLU and Mahalanobis k-NN."""
import numpy as np
cimport numpy as cnp
from cython.parallel cimport prange
from libc.math cimport sqrt

cnp.import_array()


def spmm(const cnp.int64_t[::1] indptr, const cnp.int64_t[::1] indices,
         const double[::1] data, const double[:, ::1] x, int n_threads=1):
    """Return ``A @ x`` for CSR ``A``; rows are independent so any thread
    count gives bitwise-identical output."""
    cdef Py_ssize_t n = indptr.shape[0] - 1
    cdef Py_ssize_t c = x.shape[1]
    out_arr = np.zeros((n, c), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, p, j, col
    cdef double a
    if n_threads > 1:
        for i in prange(n, nogil=True, num_threads=n_threads, schedule="static"):
            for p in range(indptr[i], indptr[i + 1]):
                a = data[p]
                col = indices[p]
                for j in range(c):
                    out[i, j] += a * x[col, j]
    else:
        with nogil:
            for i in range(n):
                for p in range(indptr[i], indptr[i + 1]):
                    a = data[p]
                    col = indices[p]
                    for j in range(c):
                        out[i, j] += a * x[col, j]
    return out_arr


def prelu_forward(const double[:, ::1] z, const double[::1] beta):
    cdef Py_ssize_t n = z.shape[0], c = z.shape[1], i, j
    out_arr = np.empty((n, c), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double v
    with nogil:
        for i in range(n):
            for j in range(c):
                v = z[i, j]
                out[i, j] = v if v >= 0.0 else beta[j] * v
    return out_arr


def prelu_backward(const double[:, ::1] z, const double[::1] beta,
                   const double[:, ::1] g):
    """Return ``(dz, dbeta)`` for upstream gradient ``g``."""
    cdef Py_ssize_t n = z.shape[0], c = z.shape[1], i, j
    dz_arr = np.empty((n, c), dtype=np.float64)
    db_arr = np.zeros(c, dtype=np.float64)
    cdef double[:, ::1] dz = dz_arr
    cdef double[::1] db = db_arr
    cdef double v
    with nogil:
        for i in range(n):
            for j in range(c):
                v = z[i, j]
                if v >= 0.0:
                    dz[i, j] = g[i, j]
                else:
                    dz[i, j] = beta[j] * g[i, j]
                    db[j] += v * g[i, j]
    return dz_arr, db_arr


def mahalanobis_select(const double[:, ::1] points, const cnp.int64_t[:, ::1] cand,
                       const cnp.int64_t[::1] self_index,
                       const double[:, ::1] sinv, int k):
    """For each row ``r`` pick the ``k`` candidates closest to
    ``points[self_index[r]]`` under ``sinv``; ties go to the smaller index."""
    cdef Py_ssize_t n = cand.shape[0], m = cand.shape[1]
    out_arr = np.empty((n, k), dtype=np.int64)
    cdef cnp.int64_t[:, ::1] out = out_arr
    dist_arr = np.empty(m, dtype=np.float64)
    idx_arr = np.empty(m, dtype=np.int64)
    cdef double[::1] dist = dist_arr
    cdef cnp.int64_t[::1] idx = idx_arr
    cdef Py_ssize_t r, q, s, t, best
    cdef cnp.int64_t ci, si
    cdef double dx, dy, dz, dd, tmp
    cdef cnp.int64_t itmp
    with nogil:
        for r in range(n):
            si = self_index[r]
            for q in range(m):
                ci = cand[r, q]
                dx = points[ci, 0] - points[si, 0]
                dy = points[ci, 1] - points[si, 1]
                dz = points[ci, 2] - points[si, 2]
                dd = (dx * (sinv[0, 0] * dx + sinv[0, 1] * dy + sinv[0, 2] * dz)
                      + dy * (sinv[1, 0] * dx + sinv[1, 1] * dy + sinv[1, 2] * dz)
                      + dz * (sinv[2, 0] * dx + sinv[2, 1] * dy + sinv[2, 2] * dz))
                dist[q] = sqrt(dd) if dd > 0.0 else 0.0
                idx[q] = ci
            # partial selection sort: k is small
            for s in range(k):
                best = s
                for t in range(s + 1, m):
                    if dist[t] < dist[best] or (dist[t] == dist[best] and idx[t] < idx[best]):
                        best = t
                tmp = dist[s]; dist[s] = dist[best]; dist[best] = tmp
                itmp = idx[s]; idx[s] = idx[best]; idx[best] = itmp
                out[r, s] = idx[s]
    return out_arr

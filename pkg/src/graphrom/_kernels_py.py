"""NumPy/SciPy reference versions of the compiled kernels.

Signatures and results match ``graphrom._kernels``; the compiled module is
preferred when importable.
"""
import numpy as np
from scipy import sparse


def spmm(indptr, indices, data, x, n_threads=1):
    n = indptr.shape[0] - 1
    a = sparse.csr_matrix((data, indices, indptr), shape=(n, x.shape[0]))
    return np.ascontiguousarray(a @ x)


def prelu_forward(z, beta):
    return np.where(z >= 0.0, z, beta * z)


def prelu_backward(z, beta, g):
    neg = z < 0.0
    dz = np.where(neg, beta * g, g)
    dbeta = np.where(neg, z * g, 0.0).sum(axis=0)
    return dz, dbeta


def mahalanobis_select(points, cand, self_index, sinv, k):
    diff = points[cand] - points[self_index][:, None, :]
    d2 = np.einsum("nmi,ij,nmj->nm", diff, sinv, diff)
    dist = np.sqrt(np.maximum(d2, 0.0))
    out = np.empty((cand.shape[0], k), dtype=np.int64)
    for r in range(cand.shape[0]):
        order = np.lexsort((cand[r], dist[r]))[:k]
        out[r] = cand[r, order]
    return out

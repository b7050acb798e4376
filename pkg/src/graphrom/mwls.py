"""Moving weighted least-squares (MWLS) transfer matrices between point sets.

Every destination node ``x_j`` gets a row of coefficients over its ``k_n``
nearest source nodes,

    phi(x_j) = p(x_j)^T (P^T W P)^+ P^T W,

with a quadratic monomial basis ``p`` centred at ``x_j`` and scaled by the
local length ``h_j`` (distance to the ``k_n``-th neighbour), and weights
``exp(-|x_j - x_i| / h_j)``.  Because the basis is centred, ``p(x_j) = e_0``
and only the first row of the pseudo-inverse is needed.

The pseudo-inverse drops eigen-directions of ``P^T W P`` below
``eps * trace``; that handles exactly planar neighbourhoods (where the
z-monomials vanish) without biasing the retained directions.  Rows whose
retained spectrum is worse conditioned than the per-order threshold drop to a
linear and then a constant (inverse-distance) basis.  So do rows where the
dropped directions touch the constant coefficient: reproduction of every
basis polynomial needs ``e_0`` inside the retained row space, which fails
when the neighbours are not unisolvent (e.g. two straight rows of points).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.spatial import cKDTree

from . import _backend

__all__ = [
    "MwlsParams",
    "InterpolationMatrix",
    "build",
    "apply",
    "build_pair",
    "monomials",
    "BASIS_SIZES",
]

BASIS_SIZES = {2: 10, 1: 4, 0: 1}
# tolerated part of e_0 outside the retained row space
_LEAK_TOL = 1e-10


@dataclass(frozen=True)
class MwlsParams:
    """Settings for :func:`build`.

    Attributes
    ----------
    k_n : int
        Source neighbours per destination node.
    order : int
        Highest basis order tried first (2 = 10-term quadratic).
    eps : float
        Relative eigenvalue cutoff, as a fraction of ``trace(P^T W P)``.
    cond_max : float
        Largest accepted condition number of the retained spectrum for the
        quadratic basis.
    cond_max_linear : float
        Same for the linear basis, whose z column is legitimately small on
        nearly flat surface patches.
    """

    k_n: int = 10
    order: int = 2
    eps: float = 1e-20
    cond_max: float = 1e6
    cond_max_linear: float = 1e12

    def __post_init__(self):
        if self.k_n < 1:
            raise ValueError("k_n must be positive")
        if self.order not in BASIS_SIZES:
            raise ValueError("order must be 0, 1 or 2")
        if self.eps < 0:
            raise ValueError("eps must be non-negative")
        if self.cond_max <= 1 or self.cond_max_linear <= 1:
            raise ValueError("condition thresholds must exceed 1")

    def threshold(self, order):
        return self.cond_max if order == 2 else self.cond_max_linear


@dataclass(frozen=True)
class InterpolationMatrix:
    """Sparse ``n_dest x n_source`` transfer matrix in CSR arrays.

    ``basis`` records the basis size each row ended up with (10, 4 or 1).
    """

    n_dest: int
    n_source: int
    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray
    basis: np.ndarray

    @property
    def shape(self):
        return (self.n_dest, self.n_source)

    @property
    def row_nnz(self) -> np.ndarray:
        return np.diff(self.indptr)

    def to_csr(self) -> sparse.csr_matrix:
        return sparse.csr_matrix(
            (self.data, self.indices, self.indptr), shape=self.shape
        )

    def transpose_csr(self) -> sparse.csr_matrix:
        return self.to_csr().T.tocsr()

    def fallback_counts(self) -> dict:
        return {str(b): int(np.sum(self.basis == b)) for b in (10, 4, 1)}


def monomials(d, order=2) -> np.ndarray:
    """Monomial basis of (..., 3) offsets up to ``order``."""
    x, y, z = d[..., 0], d[..., 1], d[..., 2]
    one = np.ones_like(x)
    if order == 0:
        return one[..., None]
    if order == 1:
        return np.stack([one, x, y, z], axis=-1)
    return np.stack([one, x, y, z, x * x, y * y, z * z, x * y, x * z, y * z], axis=-1)


def _rows_for_order(rel, w, order, eps, cond_max):
    """Coefficients and acceptance flags for one basis order."""
    if order == 0:
        return w / w.sum(axis=1, keepdims=True), np.ones(w.shape[0], dtype=bool)
    sw = np.sqrt(w)
    B = sw[..., None] * monomials(rel, order)
    U, s, Vt = np.linalg.svd(B, full_matrices=False)
    lam = s * s
    keep = lam > eps * lam.sum(axis=1, keepdims=True)
    lam_min = np.where(keep, lam, np.inf).min(axis=1)
    cond = lam[:, 0] / lam_min
    leak = 1.0 - np.sum(np.where(keep, Vt[:, :, 0] ** 2, 0.0), axis=1)
    inv_s = np.where(keep, 1.0 / np.where(keep, s, 1.0), 0.0)
    # first row of V diag(1/s) U^T, then the trailing W^1/2
    coef = np.einsum("ni,nki->nk", Vt[:, :, 0] * inv_s, U) * sw
    return coef, (cond <= cond_max) & (leak <= _LEAK_TOL)


def build(source, dest, params: MwlsParams | None = None) -> InterpolationMatrix:
    """MWLS matrix mapping fields on ``source`` points onto ``dest`` points."""
    params = params or MwlsParams()
    source = np.asarray(source, dtype=np.float64)
    dest = np.asarray(dest, dtype=np.float64)
    if source.ndim != 2 or source.shape[1] != 3 or dest.ndim != 2 or dest.shape[1] != 3:
        raise ValueError("source and dest must have shape (n, 3)")
    if not (np.all(np.isfinite(source)) and np.all(np.isfinite(dest))):
        raise ValueError("coordinates must be finite (NaN/inf found)")
    k = params.k_n
    if source.shape[0] < k:
        raise ValueError(f"need at least k_n={k} source nodes, got {source.shape[0]}")
    n_d = dest.shape[0]
    dist, idx = cKDTree(source).query(dest, k=k)
    dist = dist.reshape(n_d, k)
    idx = idx.reshape(n_d, k).astype(np.int64)
    h = dist[:, -1].copy()
    h[h <= 0.0] = 1.0
    w = np.exp(-dist / h[:, None])
    rel = (source[idx] - dest[:, None, :]) / h[:, None, None]

    data = np.empty((n_d, k))
    basis = np.zeros(n_d, dtype=np.int64)
    pending = np.arange(n_d)
    for order in range(params.order, -1, -1):
        if pending.size == 0:
            break
        coef, ok = _rows_for_order(
            rel[pending], w[pending], order, params.eps, params.threshold(order)
        )
        done = pending[ok]
        data[done] = coef[ok]
        basis[done] = BASIS_SIZES[order]
        pending = pending[~ok]

    indptr = np.arange(0, (n_d + 1) * k, k, dtype=np.int64)
    return InterpolationMatrix(
        n_d, source.shape[0], indptr, idx.ravel().copy(), data.ravel().copy(), basis
    )


def apply(matrix: InterpolationMatrix, field) -> np.ndarray:
    """Interpolate ``field`` (n_source or n_source x c) onto the destination."""
    field = np.asarray(field, dtype=np.float64)
    squeeze = field.ndim == 1
    f2 = field[:, None] if squeeze else field
    if f2.ndim != 2 or f2.shape[0] != matrix.n_source:
        raise ValueError(
            f"field has {field.shape[0] if field.ndim else 0} rows, matrix expects {matrix.n_source}"
        )
    out = _backend.kernels().spmm(
        matrix.indptr, matrix.indices, matrix.data,
        np.ascontiguousarray(f2), _backend.threads(),
    )
    return out[:, 0] if squeeze else out


def build_pair(fine, coarse, params: MwlsParams | None = None):
    """Independent ``(down, up)`` matrices: fine->coarse and coarse->fine."""
    return build(fine, coarse, params), build(coarse, fine, params)

"""Least-squares nodal gradients on unstructured graphs.

Each node's gradient solves ``min || D g - dp ||`` where the rows of ``D``
are coordinate differences to its graph neighbors and ``dp`` the matching
field differences.  Surface neighborhoods are locally planar, so ``D`` is
usually rank 2; the minimum-norm solution (singular values below
``1e-10 * s_max`` dropped) gives the tangential gradient with no spurious
normal component.

On curved surfaces the difference matrix is full rank but nearly rank 2,
and the normal component of the solve is dominated by curvature error.
Passing per-node unit ``normals`` projects it out.
"""
import numpy as np

from .mesh import Graph

__all__ = ["RCOND", "node_gradients", "gradient_magnitude_aggregate", "difference_matrices"]

RCOND = 1e-10


def difference_matrices(graph: Graph, coords):
    """Zero-padded neighbor difference stacks.

    Returns ``(D, nbr, mask)`` where ``D`` has shape (n, k_max, 3),
    ``nbr`` (n, k_max) holds neighbor indices (padding points at the node
    itself) and ``mask`` flags real rows.
    """
    coords = np.asarray(coords, dtype=np.float64)
    if coords.shape != (graph.n_nodes, 3):
        raise ValueError(f"coords must have shape ({graph.n_nodes}, 3), got {coords.shape}")
    indptr, indices = graph.neighbors()
    deg = np.diff(indptr)
    lonely = np.flatnonzero(deg == 0)
    if lonely.size:
        raise ValueError(f"node {lonely[0]} has no neighbors besides itself")
    k_max = int(deg.max())
    n = graph.n_nodes
    slot = np.arange(indices.size) - np.repeat(indptr[:-1], deg)
    row = np.repeat(np.arange(n), deg)
    nbr = np.repeat(np.arange(n)[:, None], k_max, axis=1)
    nbr[row, slot] = indices
    mask = np.zeros((n, k_max), dtype=bool)
    mask[row, slot] = True
    D = coords[nbr] - coords[:, None, :]
    return D, nbr, mask


def node_gradients(graph: Graph, coords, field, *, pinv=None, normals=None) -> np.ndarray:
    """Per-node gradient of a scalar field, shape (n, 3).

    ``pinv`` may carry precomputed pseudo-inverses from a previous call
    (see :func:`_pseudo_inverses`) to amortize factorizations across fields.
    ``normals`` (n, 3) unit vectors, when given, are projected out.
    """
    field = np.asarray(field, dtype=np.float64)
    if field.shape != (graph.n_nodes,):
        raise ValueError(f"field must have length {graph.n_nodes}, got {field.shape}")
    if pinv is None:
        pinv, nbr = _pseudo_inverses(graph, coords)
    else:
        pinv, nbr = pinv
    dp = field[nbr] - field[:, None]
    grad = np.einsum("nik,nk->ni", pinv, dp)
    if normals is not None:
        normals = np.asarray(normals, dtype=np.float64)
        if normals.shape != grad.shape:
            raise ValueError(f"normals must have shape {grad.shape}, got {normals.shape}")
        grad -= np.einsum("ni,ni->n", grad, normals)[:, None] * normals
    return grad


def _pseudo_inverses(graph, coords):
    D, nbr, _ = difference_matrices(graph, coords)
    # padded rows are exactly zero and do not change the pseudo-inverse
    return np.linalg.pinv(D, rcond=RCOND), nbr


def gradient_magnitude_aggregate(samples, graph: Graph, coords, normals=None) -> np.ndarray:
    """Per-node maximum over samples of the gradient magnitude."""
    samples = list(samples)
    if not samples:
        raise ValueError("need at least one sample field")
    pinv = _pseudo_inverses(graph, coords)
    out = None
    for field in samples:
        mag = np.linalg.norm(node_gradients(graph, coords, field, pinv=pinv, normals=normals), axis=1)
        out = mag if out is None else np.maximum(out, mag)
    return out

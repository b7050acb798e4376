"""Surface meshes, weighted graphs and the normalized propagation operator.

A surface mesh is a triangle soup over ``n`` nodes.  Its cell edges become a
symmetric weighted graph in COO form (both directions stored, plus one
self-loop of weight 1 per node), from which the operator
``D^-1/2 (A + I) D^-1/2`` used by every graph-convolution layer is built.
"""
from __future__ import annotations

import functools
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import sparse

__all__ = [
    "MeshFormatError",
    "MeshValidationError",
    "SurfaceMesh",
    "Graph",
    "PropagationOperator",
    "load_mesh",
    "save_mesh",
    "load_fields",
    "save_fields",
    "build_graph",
    "graph_from_edges",
    "distance_weights",
    "normalize_adjacency",
    "node_areas",
    "node_normals",
]


class MeshFormatError(ValueError):
    """Raised when a mesh or field file cannot be parsed."""


class MeshValidationError(ValueError):
    """Raised when mesh data violates a structural invariant."""


@dataclass(frozen=True)
class SurfaceMesh:
    """Triangulated surface.

    Parameters
    ----------
    nodes : ndarray, shape (n, 3)
        Node coordinates in meters.
    cells : ndarray, shape (m, 3)
        Triangles as 0-based node-index triples.

    Attributes
    ----------
    cell_areas : ndarray, shape (m,)
    cell_normals : ndarray, shape (m, 3)
        Unit normals following the right-hand rule on the cell ordering.
    """

    nodes: np.ndarray
    cells: np.ndarray
    cell_areas: np.ndarray = field(init=False, repr=False)
    cell_normals: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        nodes = np.ascontiguousarray(self.nodes, dtype=np.float64)
        cells = np.ascontiguousarray(self.cells, dtype=np.int64)
        if nodes.ndim != 2 or nodes.shape[1] != 3:
            raise MeshValidationError(f"nodes must have shape (n, 3), got {nodes.shape}")
        if cells.ndim != 2 or cells.shape[1] != 3:
            raise MeshValidationError(f"cells must have shape (m, 3), got {cells.shape}")
        if not np.all(np.isfinite(nodes)):
            raise MeshValidationError("node coordinates must be finite")
        n = nodes.shape[0]
        if cells.size:
            bad = np.flatnonzero((cells < 0).any(axis=1) | (cells >= n).any(axis=1))
            if bad.size:
                raise MeshValidationError(
                    f"cell {bad[0]} references node index outside [0, {n})"
                )
        used = np.zeros(n, dtype=bool)
        used[cells.ravel()] = True
        if not used.all():
            raise MeshValidationError(
                f"node {np.flatnonzero(~used)[0]} is not referenced by any cell"
            )
        a, b, c = nodes[cells[:, 0]], nodes[cells[:, 1]], nodes[cells[:, 2]]
        cross = np.cross(b - a, c - a)
        twice_area = np.linalg.norm(cross, axis=1)
        degenerate = np.flatnonzero(twice_area <= 0.0)
        if degenerate.size:
            raise MeshValidationError(f"cell {degenerate[0]} has zero area")
        nodes.setflags(write=False)
        cells.setflags(write=False)
        areas = 0.5 * twice_area
        normals = cross / twice_area[:, None]
        areas.setflags(write=False)
        normals.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "cell_areas", areas)
        object.__setattr__(self, "cell_normals", normals)

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_cells(self) -> int:
        return self.cells.shape[0]

    @property
    def total_area(self) -> float:
        return float(self.cell_areas.sum())

    @property
    def cell_centroids(self) -> np.ndarray:
        return self.nodes[self.cells].mean(axis=1)


@dataclass(frozen=True)
class Graph:
    """Symmetric weighted graph in COO form, self-loops included.

    ``edges[k] = (src, dst)`` with weight ``weights[k]``; entries are sorted
    by ``(src, dst)`` and unique.
    """

    n_nodes: int
    edges: np.ndarray
    weights: np.ndarray

    @property
    def n_edges(self) -> int:
        return self.edges.shape[0]

    def to_csr(self) -> sparse.csr_matrix:
        """Weighted adjacency ``A + I`` as a CSR matrix."""
        return sparse.csr_matrix(
            (self.weights, (self.edges[:, 0], self.edges[:, 1])),
            shape=(self.n_nodes, self.n_nodes),
        )

    def neighbors(self) -> tuple[np.ndarray, np.ndarray]:
        """CSR-style ``(indptr, indices)`` of non-self neighbors."""
        mask = self.edges[:, 0] != self.edges[:, 1]
        src, dst = self.edges[mask, 0], self.edges[mask, 1]
        indptr = np.zeros(self.n_nodes + 1, dtype=np.int64)
        np.add.at(indptr, src + 1, 1)
        return np.cumsum(indptr), dst.copy()

    def out_degree(self) -> np.ndarray:
        """Number of non-self neighbors per node."""
        indptr, _ = self.neighbors()
        return np.diff(indptr)


@dataclass(frozen=True)
class PropagationOperator:
    """``D^-1/2 (A + I) D^-1/2`` on the sparsity pattern of a :class:`Graph`."""

    n_nodes: int
    rows: np.ndarray
    cols: np.ndarray
    values: np.ndarray
    degree: np.ndarray

    def to_csr(self) -> sparse.csr_matrix:
        return sparse.csr_matrix(
            (self.values, (self.rows, self.cols)), shape=(self.n_nodes, self.n_nodes)
        )

    def to_dense(self) -> np.ndarray:
        return self.to_csr().toarray()

    @functools.cached_property
    def indptr(self) -> np.ndarray:
        """CSR row pointer; ``rows`` is sorted by construction."""
        if np.any(np.diff(self.rows) < 0):
            raise ValueError("operator rows must be sorted")
        return np.searchsorted(self.rows, np.arange(self.n_nodes + 1)).astype(np.int64)

    def apply(self, x) -> np.ndarray:
        """``Op @ x`` for a dense (n, c) block, through the kernel backend."""
        from . import _backend

        x = np.ascontiguousarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] != self.n_nodes:
            raise ValueError(f"expected ({self.n_nodes}, c) features, got {x.shape}")
        return _backend.kernels().spmm(
            self.indptr, self.cols, self.values, x, _backend.threads()
        )


def _read_lines(path):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise MeshFormatError(f"cannot read {path}: {exc}") from exc
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines:
        raise MeshFormatError(f"{path}: empty file")
    return path, lines


def _parse_block(path, lines, start, count, width, dtype, what):
    if len(lines) < start + count:
        raise MeshFormatError(
            f"{path}: expected {count} {what} lines, found {len(lines) - start}"
        )
    try:
        block = np.array(
            [ln.split() for ln in lines[start : start + count]], dtype=dtype
        )
    except ValueError as exc:
        raise MeshFormatError(f"{path}: malformed {what} line ({exc})") from exc
    if block.ndim != 2 or block.shape[1] != width:
        raise MeshFormatError(f"{path}: every {what} line needs {width} values")
    return block.reshape(count, width)


def load_mesh(path) -> SurfaceMesh:
    """Read a mesh file (``nodes <n> cells <m>`` header, coordinates, triangles)."""
    path, lines = _read_lines(path)
    head = lines[0].split()
    if len(head) != 4 or head[0] != "nodes" or head[2] != "cells":
        raise MeshFormatError(f"{path}: header must be 'nodes <n> cells <m>'")
    try:
        n, m = int(head[1]), int(head[3])
    except ValueError as exc:
        raise MeshFormatError(f"{path}: bad counts in header") from exc
    nodes = _parse_block(path, lines, 1, n, 3, np.float64, "node")
    cells = _parse_block(path, lines, 1 + n, m, 3, np.int64, "cell")
    if len(lines) != 1 + n + m:
        raise MeshFormatError(f"{path}: trailing data after {m} cells")
    return SurfaceMesh(nodes, cells)


def save_mesh(path, mesh: SurfaceMesh) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        fh.write(f"nodes {mesh.n_nodes} cells {mesh.n_cells}\n")
        np.savetxt(fh, mesh.nodes, fmt="%.17g")
        np.savetxt(fh, mesh.cells, fmt="%d")


def load_fields(path) -> tuple[list[str], np.ndarray]:
    """Read a field file; returns ``(names, values)`` with values shaped (n, c)."""
    path, lines = _read_lines(path)
    head = lines[0].split()
    if len(head) < 4 or head[0] != "fields" or head[3] != "names":
        raise MeshFormatError(f"{path}: header must be 'fields <n> <c> names <name...>'")
    try:
        n, c = int(head[1]), int(head[2])
    except ValueError as exc:
        raise MeshFormatError(f"{path}: bad counts in header") from exc
    names = head[4:]
    if len(names) != c:
        raise MeshFormatError(f"{path}: header declares {c} channels but names {len(names)}")
    values = _parse_block(path, lines, 1, n, c, np.float64, "field")
    if len(lines) != 1 + n:
        raise MeshFormatError(f"{path}: trailing data after {n} rows")
    return names, values


def save_fields(path, names, values) -> None:
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 1:
        values = values[:, None]
    if values.shape[1] != len(names):
        raise ValueError(f"{len(names)} names for {values.shape[1]} channels")
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        fh.write(f"fields {values.shape[0]} {values.shape[1]} names {' '.join(names)}\n")
        np.savetxt(fh, values, fmt="%.17g")


def distance_weights(lengths, scale) -> np.ndarray:
    """Map Euclidean edge lengths into (0, 1] as ``exp(-d / scale)``."""
    lengths = np.asarray(lengths, dtype=np.float64)
    if scale <= 0:
        raise ValueError("length scale must be positive")
    return np.exp(-lengths / scale)


def graph_from_edges(n_nodes, src, dst, coords, scale=None) -> Graph:
    """Symmetrize directed edges, weight them by length, append self-loops.

    ``scale`` defaults to the mean length of the unique undirected edges.
    """
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    keep = src != dst
    src, dst = src[keep], dst[keep]
    pairs = np.concatenate([np.stack([src, dst], 1), np.stack([dst, src], 1)])
    pairs = np.unique(pairs, axis=0)
    coords = np.asarray(coords, dtype=np.float64)
    lengths = np.linalg.norm(coords[pairs[:, 0]] - coords[pairs[:, 1]], axis=1)
    if scale is None:
        upper = pairs[:, 0] < pairs[:, 1]
        scale = float(lengths[upper].mean()) if upper.any() else 1.0
    w = distance_weights(lengths, scale)
    loops = np.arange(n_nodes, dtype=np.int64)
    edges = np.concatenate([pairs, np.stack([loops, loops], 1)])
    weights = np.concatenate([w, np.ones(n_nodes)])
    order = np.lexsort((edges[:, 1], edges[:, 0]))
    edges = np.ascontiguousarray(edges[order])
    weights = np.ascontiguousarray(weights[order])
    edges.setflags(write=False)
    weights.setflags(write=False)
    return Graph(int(n_nodes), edges, weights)


def build_graph(mesh: SurfaceMesh) -> Graph:
    """Cell-edge adjacency of ``mesh`` with ``exp(-d / mean_edge)`` weights."""
    c = mesh.cells
    src = np.concatenate([c[:, 0], c[:, 1], c[:, 2]])
    dst = np.concatenate([c[:, 1], c[:, 2], c[:, 0]])
    return graph_from_edges(mesh.n_nodes, src, dst, mesh.nodes)


def normalize_adjacency(graph: Graph) -> PropagationOperator:
    """Renormalized operator with entries ``w_ij / sqrt(d_i d_j)``."""
    rows, cols = graph.edges[:, 0], graph.edges[:, 1]
    degree = np.zeros(graph.n_nodes)
    np.add.at(degree, rows, graph.weights)
    if np.any(degree <= 0):
        raise RuntimeError(f"node {np.flatnonzero(degree <= 0)[0]} has zero degree")
    inv_sqrt = 1.0 / np.sqrt(degree)
    # product of the two scalings first keeps (i, j) and (j, i) bitwise equal
    values = graph.weights * (inv_sqrt[rows] * inv_sqrt[cols])
    return PropagationOperator(
        graph.n_nodes, rows.copy(), cols.copy(), values, degree
    )


def node_areas(mesh: SurfaceMesh) -> np.ndarray:
    """Lumped node areas: one third of every incident triangle."""
    out = np.zeros(mesh.n_nodes)
    share = np.repeat(mesh.cell_areas / 3.0, 3)
    np.add.at(out, mesh.cells.ravel(), share)
    return out


def node_normals(mesh: SurfaceMesh) -> np.ndarray:
    """Unit node normals from the area-weighted normals of incident cells."""
    acc = np.zeros((mesh.n_nodes, 3))
    np.add.at(acc, mesh.cells.ravel(), np.repeat(mesh.cell_normals * mesh.cell_areas[:, None], 3, axis=0))
    norm = np.linalg.norm(acc, axis=1, keepdims=True)
    if np.any(norm == 0):
        raise MeshValidationError(f"node {np.flatnonzero(norm[:, 0] == 0)[0]} has cancelling normals")
    return acc / norm

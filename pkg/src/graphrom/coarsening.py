"""Pooling levels: gradient-weighted node selection and graph reconnection.

Nodes are ranked by aggregated gradient magnitude (descending) and given the
retention weight

    p(i) = 1 + (1 - exp(-2 i / n)) / (1 - exp(-2)) * (p1 - pn) + p1,

clamped into (0, 1].  Exactly ``round(ratio * n)`` nodes are then drawn by
weighted sampling without replacement.  The surviving point cloud is
reconnected to its ``k`` nearest neighbours under the Mahalanobis metric of
the finer point distribution, searched inside a Euclidean k-d tree
prefilter.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from . import _backend, mwls
from .mesh import Graph, graph_from_edges

__all__ = [
    "TABLE_RATIOS",
    "RetentionProfile",
    "MahalanobisMetric",
    "PoolingLevel",
    "retention_weights",
    "select_nodes",
    "mahalanobis_distance",
    "reconnect",
    "build_level",
    "is_connected",
]

TABLE_RATIOS = (1 / 4, 1 / 3, 1 / 2)
_MIN_COARSE = 4


@dataclass(frozen=True)
class RetentionProfile:
    """Weights for the highest- (``p1``) and lowest-gradient (``pn``) nodes."""

    p1: float = 0.2
    pn: float = 1.0

    def __post_init__(self):
        for name in ("p1", "pn"):
            v = getattr(self, name)
            if not (0.0 < v <= 1.0):
                raise ValueError(f"{name} must lie in (0, 1], got {v}")

    @classmethod
    def uniform(cls):
        """Profile whose clamped weights are all 1 (density-preserving)."""
        return cls(1.0, 1.0)


@dataclass(frozen=True)
class MahalanobisMetric:
    covariance: np.ndarray
    inverse: np.ndarray

    @classmethod
    def from_points(cls, points, reg=1e-9):
        points = np.asarray(points, dtype=np.float64)
        if points.shape[0] < 2:
            raise ValueError("need at least two points for a covariance")
        S = np.cov(points, rowvar=False)
        S = 0.5 * (S + S.T) + reg * np.trace(S) * np.eye(3)
        return cls(S, np.linalg.inv(S))

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.eye(3))


def mahalanobis_distance(metric: MahalanobisMetric, x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("points must be finite")
    d = x - y
    return float(np.sqrt(max(d @ metric.inverse @ d, 0.0)))


def retention_weights(n, profile: RetentionProfile) -> np.ndarray:
    """Clamped weights for gradient ranks ``i = 1..n``."""
    i = np.arange(1, n + 1, dtype=np.float64)
    raw = 1.0 + (1.0 - np.exp(-2.0 * i / n)) / (1.0 - np.exp(-2.0)) * (
        profile.p1 - profile.pn
    ) + profile.p1
    return np.clip(raw, np.finfo(float).tiny, 1.0)


def _check_ratio(ratio, n):
    if not (0.0 < ratio < 1.0):
        raise ValueError(f"ratio must lie in (0, 1), got {ratio}")
    m = int(round(ratio * n))
    if m < _MIN_COARSE:
        raise ValueError(f"ratio {ratio} of {n} nodes leaves {m} < {_MIN_COARSE} nodes")
    if not any(abs(ratio - r) < 1e-12 for r in TABLE_RATIOS):
        warnings.warn(f"compression ratio {ratio} is outside {{1/4, 1/3, 1/2}}", stacklevel=3)
    return m


def select_nodes(aggregate_gradient, ratio, profile=None, seed=0) -> np.ndarray:
    """Sorted indices of the retained nodes."""
    profile = profile or RetentionProfile()
    g = np.asarray(aggregate_gradient, dtype=np.float64)
    if not np.all(np.isfinite(g)):
        raise ValueError("gradients must be finite")
    n = g.size
    m = _check_ratio(ratio, n)
    # descending gradient; equal gradients keep ascending index order
    order = np.lexsort((np.arange(n), -g))
    weights = np.empty(n)
    weights[order] = retention_weights(n, profile)
    rng = np.random.default_rng(seed)
    chosen = rng.choice(n, size=m, replace=False, p=weights / weights.sum())
    return np.sort(chosen)


def reconnect(coords, k=5, prefilter=250, metric: MahalanobisMetric | None = None) -> tuple[Graph, np.ndarray]:
    """Graph over ``coords`` from Mahalanobis k-NN inside a Euclidean prefilter.

    Returns the symmetrized graph and the directed ``(n, k)`` neighbour table.
    ``metric`` defaults to the covariance of ``coords`` themselves; callers
    building a level pass the metric of the finer point set.
    """
    coords = np.asarray(coords, dtype=np.float64)
    n = coords.shape[0]
    if n == 0:
        raise ValueError("no points to reconnect")
    if prefilter < k:
        raise ValueError("prefilter must be at least k")
    if n <= k:
        raise ValueError(f"need more than k={k} points, got {n}")
    metric = metric or MahalanobisMetric.from_points(coords)
    m = min(prefilter, n - 1)
    _, cand = cKDTree(coords).query(coords, k=m + 1)
    cand = np.asarray(cand, dtype=np.int64).reshape(n, m + 1)
    self_idx = np.arange(n, dtype=np.int64)
    # drop the query point itself; rows where the tree omitted it lose their last slot
    drop = cand == self_idx[:, None]
    drop[~drop.any(axis=1), -1] = True
    cand = cand[~drop].reshape(n, m)
    nbrs = _backend.kernels().mahalanobis_select(
        coords, np.ascontiguousarray(cand), self_idx, np.ascontiguousarray(metric.inverse), k
    )
    src = np.repeat(self_idx, k)
    graph = graph_from_edges(n, src, nbrs.ravel(), coords)
    return graph, nbrs


def is_connected(graph: Graph) -> bool:
    n_comp, _ = connected_components(graph.to_csr(), directed=False)
    return n_comp == 1


@dataclass(frozen=True)
class PoolingLevel:
    """Precomputed coarsening step between a fine and a coarse node set.

    ``selected`` indexes the fine node set; ``down`` maps fine fields to
    the coarse set and ``up`` maps them back.
    """

    fine_n: int
    coarse_n: int
    ratio: float
    selected: np.ndarray
    coarse_coords: np.ndarray
    coarse_graph: Graph
    down: mwls.InterpolationMatrix
    up: mwls.InterpolationMatrix
    diagnostics: dict = field(default_factory=dict)


def build_level(fine_graph: Graph, fine_coords, aggregate_gradient, ratio,
                profile=None, seed=0, mwls_params=None, k=5, prefilter=250,
                node_weights=None) -> PoolingLevel:
    """Select, reconnect and build both transfer matrices for one level.

    ``node_weights`` (e.g. lumped fine-node areas, default uniform) weight
    the integral used for the reported conservation defect of the
    ``up @ down`` round trip; MWLS does not enforce conservation.
    """
    fine_coords = np.asarray(fine_coords, dtype=np.float64)
    if fine_coords.shape != (fine_graph.n_nodes, 3):
        raise ValueError("fine_coords must match the fine graph")
    selected = select_nodes(aggregate_gradient, ratio, profile, seed)
    coarse = fine_coords[selected]
    metric = MahalanobisMetric.from_points(fine_coords)
    graph, _ = reconnect(coarse, k=k, prefilter=prefilter, metric=metric)
    down, up = mwls.build_pair(fine_coords, coarse, mwls_params)
    # affine probe: exact under quadratic and linear rows
    probe = fine_coords @ np.array([0.7, -1.3, 0.4]) + 0.25
    round_trip = mwls.apply(up, mwls.apply(down, probe))
    scale = max(np.abs(probe).max(), 1.0)
    # smooth non-polynomial probe for the integral defect
    c = fine_coords - fine_coords.mean(axis=0)
    c /= max(np.abs(c).max(), 1e-300)
    smooth = 1.0 + 0.5 * np.sin(3.0 * c[:, 0]) * np.cos(2.0 * c[:, 1]) + 0.2 * c[:, 2]
    wts = np.ones(fine_coords.shape[0]) if node_weights is None else np.asarray(node_weights, float)
    back = mwls.apply(up, mwls.apply(down, smooth))
    defect = abs(wts @ back - wts @ smooth) / (wts @ np.abs(smooth))
    diagnostics = {
        "fine_n": int(fine_graph.n_nodes),
        "coarse_n": int(selected.size),
        "coarse_edges": int(graph.n_edges),
        "connected": bool(is_connected(graph)),
        "affine_round_trip_error": float(np.abs(round_trip - probe).max() / scale),
        "conservation_defect": float(defect),
        "down_basis": down.fallback_counts(),
        "up_basis": up.fallback_counts(),
    }
    return PoolingLevel(
        fine_graph.n_nodes, int(selected.size), float(ratio), selected, coarse,
        graph, down, up, diagnostics,
    )

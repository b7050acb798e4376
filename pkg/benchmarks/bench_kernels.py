"""Compiled vs pure-Python kernel timings on a synthetic surface mesh.

Run with ``python3 benchmarks/bench_kernels.py [--nodes N] [--repeat R]``.
Prints one line per kernel with best-of-R wall time for each backend.
"""
import argparse
import time

import numpy as np

from graphrom import _backend, _kernels_py
from graphrom.coarsening import MahalanobisMetric
from graphrom.dataset import SyntheticCase, build_mesh
from graphrom.mesh import build_graph, normalize_adjacency
from scipy.spatial import cKDTree


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(n_nodes, channels, seed=0):
    side = max(3, int(round(np.sqrt(n_nodes / 1.44))))
    case = SyntheticCase(n_chord=int(1.44 * side), n_span=side)
    mesh = build_mesh(case)
    op = normalize_adjacency(build_graph(mesh))
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((mesh.n_nodes, channels))
    z = rng.standard_normal((mesh.n_nodes, channels))
    beta = np.full(channels, 0.25)
    g = rng.standard_normal((mesh.n_nodes, channels))
    pts = mesh.nodes
    m = min(250, pts.shape[0] - 1)
    _, cand = cKDTree(pts).query(pts, k=m + 1)
    cand = np.ascontiguousarray(cand[:, 1:], dtype=np.int64)
    self_idx = np.arange(pts.shape[0], dtype=np.int64)
    sinv = MahalanobisMetric.from_points(pts).inverse
    return {
        "spmm": lambda k: k.spmm(op.indptr, op.cols, op.values, x, 1),
        "prelu_forward": lambda k: k.prelu_forward(z, beta),
        "prelu_backward": lambda k: k.prelu_backward(z, beta, g),
        "mahalanobis_select": lambda k: k.mahalanobis_select(pts, cand, self_idx, sinv, 5),
    }, mesh.n_nodes


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--nodes", type=int, default=3000)
    ap.add_argument("--channels", type=int, default=64)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    table, n = cases(args.nodes, args.channels)
    print(f"nodes={n} channels={args.channels} compiled={'yes' if _backend.has_compiled() else 'no'}")
    print(f"{'kernel':<20}{'python [ms]':>14}{'compiled [ms]':>16}{'speedup':>10}")
    for name, fn in table.items():
        t_py = best_of(lambda: fn(_kernels_py), args.repeat)
        if _backend.has_compiled():
            from graphrom import _kernels

            t_c = best_of(lambda: fn(_kernels), args.repeat)
            print(f"{name:<20}{1e3 * t_py:>14.3f}{1e3 * t_c:>16.3f}{t_py / t_c:>10.2f}")
        else:
            print(f"{name:<20}{1e3 * t_py:>14.3f}{'n/a':>16}{'':>10}")


if __name__ == "__main__":
    main()

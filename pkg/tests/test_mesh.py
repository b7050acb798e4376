import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from graphrom.mesh import (
    Graph,
    MeshFormatError,
    MeshValidationError,
    SurfaceMesh,
    build_graph,
    graph_from_edges,
    load_fields,
    load_mesh,
    node_areas,
    normalize_adjacency,
    save_fields,
    save_mesh,
)


def unit_square():
    nodes = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], float)
    return SurfaceMesh(nodes, np.array([[0, 1, 2], [0, 2, 3]]))


def random_graph(rng, n, p=0.3):
    pts = rng.standard_normal((n, 3))
    src, dst = np.nonzero(np.triu(rng.random((n, n)) < p, 1))
    # chain keeps it connected
    src = np.concatenate([src, np.arange(n - 1)])
    dst = np.concatenate([dst, np.arange(1, n)])
    return graph_from_edges(n, src, dst, pts), pts


def dense_operator(graph):
    A = np.zeros((graph.n_nodes, graph.n_nodes))
    A[graph.edges[:, 0], graph.edges[:, 1]] = graph.weights
    d = A.sum(axis=1)
    return A / np.sqrt(np.outer(d, d))


def test_right_triangle_area_and_normal():
    m = SurfaceMesh(np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0]], float), np.array([[0, 1, 2]]))
    assert m.cell_areas[0] == 0.5
    np.testing.assert_array_equal(m.cell_normals[0], [0, 0, 1])


def test_square_total_area():
    assert unit_square().total_area == pytest.approx(1.0, abs=1e-15)


def test_out_of_range_index_rejected(tmp_path):
    p = tmp_path / "bad.txt"
    p.write_text("nodes 3 cells 1\n0 0 0\n1 0 0\n0 1 0\n0 1 3\n")
    with pytest.raises(MeshValidationError, match="outside"):
        load_mesh(p)


def test_degenerate_and_orphan_rejected():
    nodes = np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0], [5, 5, 5]], float)
    with pytest.raises(MeshValidationError, match="zero area"):
        SurfaceMesh(nodes[:3], np.array([[0, 1, 2]]))
    with pytest.raises(MeshValidationError, match="not referenced"):
        SurfaceMesh(np.vstack([nodes[:2], [[0, 1, 0]], nodes[3:]]), np.array([[0, 1, 2]]))


@pytest.mark.parametrize("text", [
    "nodes 3 cell 1\n",
    "nodes 3 cells 1\n0 0 0\n1 0\n0 1 0\n0 1 2\n",
    "nodes 3 cells 1\n0 0 0\n1 0 0\n0 1 0\n",
    "nodes x cells 1\n",
])
def test_malformed_files(tmp_path, text):
    p = tmp_path / "m.txt"
    p.write_text(text)
    with pytest.raises(MeshFormatError):
        load_mesh(p)


def test_mesh_and_field_round_trip(tmp_path, demo_mesh, rng):
    save_mesh(tmp_path / "m.txt", demo_mesh)
    back = load_mesh(tmp_path / "m.txt")
    np.testing.assert_array_equal(back.nodes, demo_mesh.nodes)
    np.testing.assert_array_equal(back.cells, demo_mesh.cells)
    vals = rng.standard_normal((demo_mesh.n_nodes, 2))
    save_fields(tmp_path / "f.txt", ["a", "b"], vals)
    names, got = load_fields(tmp_path / "f.txt")
    assert names == ["a", "b"]
    np.testing.assert_array_equal(got, vals)


def test_single_triangle_counts():
    m = SurfaceMesh(np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0]], float), np.array([[0, 1, 2]]))
    g = build_graph(m)
    assert g.n_edges == 9
    loops = g.edges[:, 0] == g.edges[:, 1]
    assert loops.sum() == 3 and np.all(g.weights[loops] == 1.0)


@pytest.mark.parametrize("scale", [1e-3, 1.0, 250.0])
def test_equilateral_weights_equal(scale):
    nodes = scale * np.array([[0, 0, 0], [1, 0, 0], [0.5, np.sqrt(3) / 2, 0]])
    g = build_graph(SurfaceMesh(nodes, np.array([[0, 1, 2]])))
    off = g.weights[g.edges[:, 0] != g.edges[:, 1]]
    assert np.ptp(off) < 1e-15 and 0 < off[0] < 1
    assert off[0] == pytest.approx(np.exp(-1.0))


def test_two_nodes_at_mean_length():
    g = graph_from_edges(2, [0], [1], np.array([[0, 0, 0], [0.37, 0, 0]]))
    assert g.weights[1] == pytest.approx(0.36787944117144233, abs=1e-15)


def test_graph_invariants(demo_mesh):
    g = build_graph(demo_mesh)
    key = g.edges[:, 0] * g.n_nodes + g.edges[:, 1]
    assert np.all(np.diff(key) > 0)  # sorted, unique
    rev = g.edges[:, 1] * g.n_nodes + g.edges[:, 0]
    pos = np.searchsorted(key, rev)
    np.testing.assert_array_equal(key[pos], rev)
    np.testing.assert_array_equal(g.weights[pos], g.weights)
    assert np.all((g.weights > 0) & (g.weights <= 1))
    g2 = build_graph(demo_mesh)
    assert np.array_equal(g.edges, g2.edges) and np.array_equal(g.weights, g2.weights)


def test_isolated_node_operator():
    g = Graph(1, np.array([[0, 0]]), np.array([1.0]))
    np.testing.assert_array_equal(normalize_adjacency(g).to_dense(), [[1.0]])


def test_two_node_operator():
    g = Graph(2, np.array([[0, 0], [0, 1], [1, 0], [1, 1]]), np.ones(4))
    np.testing.assert_allclose(normalize_adjacency(g).to_dense(), 0.5, atol=1e-16)


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 50), st.integers(0, 2**31))
def test_operator_matches_dense_oracle(n, seed):
    g, _ = random_graph(np.random.default_rng(seed), n)
    op = normalize_adjacency(g)
    D = op.to_dense()
    np.testing.assert_allclose(D, dense_operator(g), rtol=0, atol=1e-12)
    assert np.array_equal(D, D.T)
    np.testing.assert_allclose(np.diag(D), 1.0 / op.degree, rtol=1e-14)
    ev = np.linalg.eigvalsh(D)
    assert ev.min() >= -1 - 1e-12 and ev.max() <= 1 + 1e-12
    assert np.all(op.values > 0)


def test_operator_apply_matches_csr(demo_mesh, rng):
    op = normalize_adjacency(build_graph(demo_mesh))
    x = rng.standard_normal((demo_mesh.n_nodes, 3))
    np.testing.assert_allclose(op.apply(x), op.to_csr() @ x, atol=1e-14)


def test_node_areas_conserve_total(demo_mesh):
    assert node_areas(demo_mesh).sum() == pytest.approx(demo_mesh.total_area, rel=1e-13)

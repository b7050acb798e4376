import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from graphrom.dataset import (
    Doe,
    SyntheticCase,
    build_mesh,
    generate_case,
    lhs_sample,
    shock_cells,
    shock_offsets,
    shock_position,
    split,
)
from graphrom.gradients import node_gradients
from graphrom.mesh import build_graph, node_normals


def test_lhs_strata():
    d = lhs_sample(Doe())
    assert d.shape == (70, 2)
    for col, (lo, hi) in ((0, (0.0, 5.0)), (1, (0.70, 0.84))):
        k = np.floor((d[:, col] - lo) / (hi - lo) * 70).astype(int)
        assert sorted(k) == list(range(70))


def test_lhs_single_and_seeded():
    one = lhs_sample(Doe(n_samples=1, counts=None))
    assert 0 <= one[0, 0] <= 5 and 0.70 <= one[0, 1] <= 0.84
    np.testing.assert_array_equal(lhs_sample(Doe(seed=3)), lhs_sample(Doe(seed=3)))


def test_split_counts_and_partition():
    s = split(70, counts=(40, 15, 15), seed=2)
    assert [len(s[k]) for k in ("train", "val", "test")] == [40, 15, 15]
    allidx = np.concatenate(list(s.values()))
    assert sorted(allidx) == list(range(70))
    f = split(70, fractions=(0.6, 0.2, 0.2))
    assert [len(f[k]) for k in ("train", "val", "test")] == [42, 14, 14]
    for k in s:
        np.testing.assert_array_equal(s[k], split(70, counts=(40, 15, 15), seed=2)[k])
    with pytest.raises(ValueError):
        split(70, counts=(40, 15, 10))
    with pytest.raises(ValueError):
        split(70, fractions=(0.5, 0.2, 0.2))


def test_doe_validation():
    with pytest.raises(ValueError):
        Doe(counts=(40, 15, 14))
    with pytest.raises(ValueError):
        Doe(aoa_range=(5.0, 0.0))
    with pytest.raises(ValueError):
        Doe(n_samples=0, counts=None)


def test_case_validation():
    with pytest.raises(ValueError):
        SyntheticCase(n_chord=2)
    with pytest.raises(ValueError):
        SyntheticCase(delta=0.0)


def test_generation_deterministic_and_finite(demo_case):
    m1, a = generate_case(demo_case, 2.0, 0.75)
    m2, b = generate_case(demo_case, 2.0, 0.75)
    np.testing.assert_array_equal(a.targets, b.targets)
    assert a.targets.shape == (m1.n_nodes, 4)
    assert np.all(np.isfinite(a.targets))
    assert np.abs(a.targets[:, 0]).max() < 3.0


def test_smooth_limit():
    case = SyntheticCase(delta=1e6)
    mesh, s = generate_case(case, 2.0, 0.8)
    cp = s.targets[:, 0].reshape(case.n_span, case.n_chord)
    assert np.abs(np.diff(cp, axis=1)).max() < 1e-5


def test_front_moves_with_mach(demo_case):
    d = lhs_sample(Doe())
    order = np.argsort(d[:, 1])
    xs = shock_position(demo_case, 2.5, d[order, 1])
    assert np.all(np.diff(xs) > 0)
    cells = [np.median(shock_cells(demo_case, generate_case(demo_case, 2.5, m)[1].targets[:, 0]))
             for m in (0.70, 0.76, 0.82)]
    assert cells[0] < cells[1] < cells[2]


def test_gradient_peaks_near_front(demo_case, demo_mesh):
    _, s = generate_case(demo_case, 2.0, 0.76)
    g = node_gradients(build_graph(demo_mesh), demo_mesh.nodes, s.targets[:, 0],
                       normals=node_normals(demo_mesh))
    mag = np.linalg.norm(g, axis=1).reshape(demo_case.n_span, demo_case.n_chord)
    xi = demo_case.chord_fractions()
    eta = demo_case.span_fractions()
    for j in range(1, demo_case.n_span - 1):
        peak = xi[np.argmax(mag[j])]
        assert abs(peak - shock_position(demo_case, 2.0, 0.76, eta[j])) <= 2 * demo_case.delta


def test_shock_offsets_self_zero(demo_case):
    _, s = generate_case(demo_case, 3.0, 0.8)
    assert not shock_offsets(demo_case, s.targets[:, 0], s.targets[:, 0]).any()
    assert shock_cells(demo_case, s.targets[:, 0]).shape == (demo_case.n_span,)


@settings(max_examples=10, deadline=None)
@given(st.integers(3, 40), st.integers(2, 30))
def test_mesh_counts(nc, ns):
    case = SyntheticCase(n_chord=nc, n_span=ns)
    m = build_mesh(case)
    assert m.n_nodes == nc * ns and m.n_cells == 2 * (nc - 1) * (ns - 1)
    # upper-surface orientation
    assert np.all(m.cell_normals[:, 2] > 0)
